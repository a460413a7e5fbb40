"""Compare the observed spectral variation with the perturbation bound.

The factor ``C`` of a random rank-R tensor is perturbed while ``A`` and
``B`` stay fixed; the generalized eigenvalue lines move by at most the
bound.  Run with ``python3 demos/spectral_variation.py``.
"""

import numpy as np

from tensorcert import (
    FactorTriple,
    SeededRng,
    bauer_fike_sv_bound,
    factor_spectrum,
    random_rank_r,
    spectral_variation,
    synthesize,
)

R = 4
rng = SeededRng(7)
T, f = random_rank_r(rng.child("signal"), (R, R, R), R)
E = rng.child("noise").standard_normal((R, R))
print(" SNR dB   log10 sv   log10 bound")
for snr in range(0, 101, 20):
    scale = np.linalg.norm(f.C) / np.linalg.norm(E) * 10 ** (-snr / 20)
    g = FactorTriple(f.A, f.B, f.C + scale * E)
    sv = spectral_variation(factor_spectrum(f.C), factor_spectrum(g.C))
    b = bauer_fike_sv_bound(f, synthesize(g) - T, "shared_factor", rng.child("hopm", snr))
    print(f"{snr:7d} {np.log10(sv):10.3f} {np.log10(min(b.bound, 1.0)):12.3f}")
