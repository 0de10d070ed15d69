# Emit the plot-ready CSV series behind each figure preset into ./figures.
# The two policy presets are instant; pass --full to also run the two
# simulation-backed presets at a reduced seed count.

import sys

from adasurv import reproduce_figures

OUT = "figures"

for preset in ("POLICY_FIG2", "RATIO_FIG5"):
    for path in reproduce_figures(preset, OUT):
        print("wrote", path)

if "--full" in sys.argv:
    for preset in ("SYN_FIG3", "CURVES_FIG6"):
        for path in reproduce_figures(preset, OUT, threads=2, seeds=range(1, 13)):
            print("wrote", path)
else:
    print("pass --full to also run the simulation-backed presets (several minutes)")
