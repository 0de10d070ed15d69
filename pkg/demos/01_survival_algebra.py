# Walk through the exact discrete-time survival algebra on a small grid:
# hazard pairs, the two tie conventions, the enumerated outcome law, and
# the mean-zero structure of the censoring-weighted scores.

import numpy as np

from adasurv import (
    NuisanceAtArm,
    TieConvention,
    censoring_survival,
    eif_pseudo_outcome,
    event_survival,
    outcome_atoms,
)
from adasurv.core import eif_pseudo_outcome_values, ipcw_score_path

np.set_printoptions(precision=4, suppress=True)

# a five-period world with constant hazards
nu = NuisanceAtArm(lam_s=np.full(5, 0.3), lam_g=np.full(5, 0.1))

print("survival S_t:", [round(event_survival(nu, t), 4) for t in range(5)])
for conv in (TieConvention.TIES, TieConvention.NO_TIES):
    g = [round(censoring_survival(nu, t, conv), 4) for t in range(5)]
    print(f"censoring survival G_(t-1) under {conv.name}:", g)

# the exact law of (observed time, indicator): 2 * 5 + 1 atoms
atoms = outcome_atoms(nu, TieConvention.TIES)
print("\natoms (time, indicator, probability):")
for atom in atoms:
    print(f"  ({atom.t_tilde:>2}, {atom.delta}, {atom.prob:.4f})")
print("total mass:", sum(a.prob for a in atoms))

# the score increments have mean zero under the same law, horizon by horizon
total = np.zeros(5)
for atom in atoms:
    total += atom.prob * ipcw_score_path(atom.t_tilde, atom.delta, nu, TieConvention.TIES)
print("\nmean score per horizon (should be ~0):", total)

# and the influence-function pseudo-outcome averages back to the survival
# contrast for any interior assignment probability
nu1 = NuisanceAtArm(lam_s=np.full(5, 0.2), lam_g=np.full(5, 0.1))
pi = 0.3
mean_phi = np.zeros(5)
for a, p_arm, nu_a in ((0, 1 - pi, nu), (1, pi, nu1)):
    for atom in outcome_atoms(nu_a, TieConvention.TIES):
        mean_phi += p_arm * atom.prob * eif_pseudo_outcome_values(
            atom.t_tilde, atom.delta, a, pi, nu, nu1, TieConvention.TIES
        )
truth = np.cumprod(1 - nu1.lam_s) - np.cumprod(1 - nu.lam_s)
print("\nE[pseudo-outcome] - survival contrast:", mean_phi - truth)
