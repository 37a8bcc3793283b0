"""Stereo back-projection and the camera projection loss on one synthetic camera."""
import numpy as np

from cplcalib import datagen
from cplcalib.cpl import PARAM_NAMES, cpl_loss, decomposed_loss

# One CVGL-style configuration with eight observed pixels.
rec = datagen.generate_record(datagen.PRESETS["cvgl"], 0, 8, 0.0, seed=11)
print("ground truth:", rec.camera)
print("world points (first three):")
print(np.round(rec.world[:3], 3))

# Nudge the pitch by half a degree and the baseline by 5%.
pred = rec.params.copy()
pred[6] += np.radians(0.5)
pred[4] *= 1.05

# A plain parameter MAE treats every component alike ...
print("parameter MAE:", np.mean(np.abs(pred - rec.params)))

# ... while the projection loss measures how far the world points move.
obs = rec.observations.without_disparity()
print("projection loss:", cpl_loss(rec.params, pred, obs))

# The decomposed form credits each parameter with its own share.
rep = decomposed_loss(rec.params, pred, obs)
for name, term in zip(PARAM_NAMES, rep.per_param):
    if term:
        print(f"  L_{name:8s} {term:.6f}")
print("mean of the terms:", rep.total)
