"""Smoothing a frame stream and raising sustained-distraction alerts.

Run: python3 demos/02_streaming_alerts.py
"""
import numpy as np

from mvfusion.core import Task
from mvfusion.temporal import StreamConfig, StreamProcessor, process_stream

rng = np.random.default_rng(0)
task = Task.RH_OBJ  # Phone, Beverage, Tablet, None

# 30 frames holding nothing, 40 with a phone, 10 empty again; a noisy classifier on top
truth = np.r_[np.full(30, 3), np.full(40, 0), np.full(10, 3)]
noisy = 0.3 * np.eye(4)[truth] + 0.7 * rng.dirichlet(np.ones(4), size=len(truth))
raw_cls = noisy.argmax(axis=1)
print("raw argmax flips:", int(np.sum(raw_cls[1:] != raw_cls[:-1])))

cfg = StreamConfig(window_size=5, sustain_threshold=15)
filtered, cls, alerts = process_stream(noisy, task, cfg)
print("filtered argmax flips:", int(np.sum(cls[1:] != cls[:-1])))
for a in alerts:
    print("alert:", a.to_dict())

# the same stream pushed one frame at a time gives the same alerts
proc = StreamProcessor(task, cfg)
live = [r.alert for r in map(proc.push, noisy) if r.alert is not None]
print("streaming matches batch:", live == alerts)
