"""Held-object model first, hand location only when the hand is empty.

Run: python3 demos/03_cascade.py
"""
import numpy as np

from mvfusion import datagen, fusion
from mvfusion.core import Task
from mvfusion.nn import TrainConfig
from mvfusion.temporal import NONE_OBJECT, Cascade

data = datagen.split(datagen.generate(datagen.GenConfig(num_subjects=6, rng_seed=7)), seed=7)
cfg = TrainConfig(rng_seed=7)
obj = fusion.fusion_train(data, Task.RH_OBJ, cfg)
loc = fusion.fusion_train(data, Task.RH_LOC, cfg)

casc = Cascade(obj, loc)
test = data.tagged("test").collections
outputs = [casc(c) for c in test]
empty = sum(o["object"] == NONE_OBJECT for o in outputs)
print(f"{len(test)} frames, {empty} predicted empty-handed")
print(f"model evaluations {casc.evaluations} (always-both would be {2 * len(test)})")
print("first five:", outputs[:5])

rh_obj = Task.RH_OBJ.spec.classes
acc = np.mean([o["object"] == c.labels["rh_obj"] for o, c in zip(outputs, test)])
print(f"held-object accuracy {acc:.3f} over classes {rh_obj}")
