"""
Meta-path similarity on a toy network
=====================================

Four users, five movies, two directors. We build the graph, compose the
UMDMU commuting matrix and turn it into PathSim scores.
"""

import numpy as np

from neuacf import Schema, build_graph, commuting_matrix, parse_metapath, pathsim

schema = Schema("UMD", [("UM", "U", "M"), ("MD", "M", "D")])
graph = build_graph(
    schema,
    {
        "UM": [(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (3, 3), (3, 4)],
        "MD": [(0, 0), (1, 0), (2, 0), (3, 1), (4, 1)],
    },
    {"U": 4, "M": 5, "D": 2},
)

# %%
# The commuting matrix counts U-M-D-M-U path instances between users.
path = parse_metapath("UMDMU", schema)
counts = commuting_matrix(graph, path)
print("path counts\n", counts.toarray())

# %%
# PathSim normalises by the two self-path counts, so scores lie in [0, 1]
# and every user with at least one path has similarity 1 with itself.
sim = pathsim(counts, "director", "user")
np.set_printoptions(precision=3, suppress=True)
print("PathSim\n", sim.dense())

# %%
# Users 0 and 1 share director 0, users 2 and 3 share director 1.
print("user 0 row:", sim.dense()[0])
