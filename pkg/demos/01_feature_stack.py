"""
From source bands to a 30-layer feature stack
=============================================

Builds a small synthetic set of optical and auxiliary rasters on two
different grids, merges them onto the 10 m lattice and derives terrain,
spectral-index, texture, PCA and tasseled-cap layers.
"""

# %%
# Two source stacks: twelve optical bands at 10 m and five auxiliary
# bands (DEM, land surface temperature, velocity, coherence, phase) at 20 m.
import numpy as np

from cryonet.pipeline import SENTINEL2_ROLES, build_feature_stack, collect_sources
from cryonet.raster import BandStack, Geometry

rng = np.random.default_rng(0)
fine = Geometry(64, 64, 500000.0, 5100000.0, 10.0)
coarse = Geometry(32, 32, 500000.0, 5100000.0, 20.0)
optical = BandStack(fine, list(SENTINEL2_ROLES), list(SENTINEL2_ROLES),
                    rng.uniform(0.02, 0.6, (12, 64, 64)).astype(np.float32))

yy, xx = np.mgrid[:32, :32]
aux = rng.standard_normal((5, 32, 32)).astype(np.float32)
aux[0] = 2500 + 8.0 * yy - 3.0 * xx  # a tilted plane: slope and aspect are known
aux_roles = ["Elevation", "LST", "Velocity", "Coherence", "Phase"]
auxiliary = BandStack(coarse, aux_roles, aux_roles, aux)

# %%
# The auxiliary grid is bilinearly resampled onto the optical lattice.
sources = collect_sources([optical, auxiliary])
stack, loadings = build_feature_stack(sources)
print(len(stack), "bands:", ", ".join(stack.names))

# %%
# The DEM drops 8 m per 20 m pixel to the north and rises 3 m per pixel to
# the west, so the surface faces roughly north-north-east.
s = stack.by_role("Slope").values[10:-10, 10:-10]
a = stack.by_role("Aspect").values[10:-10, 10:-10]
expected = np.degrees(np.arctan(np.hypot(8.0, 3.0) / 20.0))
print(f"slope {s.mean():.3f} deg (plane: {expected:.3f}), aspect {a.mean():.1f} deg")

# %%
# PCA loadings are kept so another scene can be projected on the same axes.
print("explained variance:", np.round(loadings.eigenvalues / loadings.all_eigenvalues.sum(), 3))
