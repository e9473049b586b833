"""
Labels, patches and class weights
=================================

Composes a five-class mask from glacier outlines and thresholded indices,
cuts the scene into overlapping patches and computes inverse-frequency
class weights for training.
"""

# %%
import numpy as np

from cryonet.dataset import class_weights, patchify, split
from cryonet.labels import CLASS_NAMES, compose_labels
from cryonet.raster import BandStack, Geometry

geom = Geometry(80, 60)
yy, xx = np.mgrid[:60, :80]
glacier = (yy - 30) ** 2 + (xx - 40) ** 2 < 20 ** 2
debris = glacier & (yy > 36)
water = (xx < 12) & (yy < 20)
vegetation = yy > 50

# %%
# Debris wins over clean ice, which wins over water, then vegetation.
mask, counts = compose_labels(glacier & ~debris, debris, water, vegetation, geometry=geom)
for name, n in zip(CLASS_NAMES, counts):
    print(f"{name:>12}: {n}")

# %%
# 32 px patches with stride 16. The last row and column of patches are
# clamped to the scene edge rather than padded.
rng = np.random.default_rng(1)
stack = BandStack(geom, ["b0", "b1", "b2"], [], rng.standard_normal((3, 60, 80)).astype(np.float32))
ps = split(patchify(stack, mask, 32, 16), 0.8, seed=0)
print(len(ps), "patches at offsets", sorted({p.offset for p in ps.patches}))
print("train/test:", len(ps.indices("train")), len(ps.indices("test")))
_, y = ps.arrays("train")
print("class weights:", np.round(class_weights(y), 3))
