"""Overfit the full tiny transformer on 8 fixed samples, then decode them back.

Run:  python demos/03_tiny_training.py    (about half a minute on a laptop)
"""
import numpy as np

from visq.data import build_target, fit_codecs
from visq.inference import greedy_matches_target
from visq.instructions import load_corpus
from visq.model import ModelConfig, init_parameters
from visq.scenes import generate_scene
from visq.trainer import overfit
from visq.vocab import build_layout

corpus = load_corpus()
scenes = [generate_scene(100 + i) for i in range(48)]
layout = build_layout(3, 128, 100, 512)
print("fitting codecs ...")
codecs = fit_codecs(scenes[:40], corpus, layout, iters=25, seed=0)

rng = np.random.default_rng(11)
tasks = ["semseg", "semseg", "res", "res", "rec", "rec", "caption", "caption"]
samples = [build_target(t, scenes[40 + i], rng, codecs, corpus) for i, t in enumerate(tasks)]
print("8 fixed samples, two per task; instructions like:")
for s in samples[::2]:
    print(f"  [{s.task}] {s.instruction}")

params = init_parameters(ModelConfig(layout=layout), seed=0)
print("\ntraining until greedy decode reproduces every target ...")
steps, loss = overfit(
    params, samples, codecs, max_steps=3000, lr=1e-3, stop_loss=0.04,
    verify_fn=lambda p: all(greedy_matches_target(p, s, codecs) for s in samples),
)
exact = sum(greedy_matches_target(params, s, codecs) for s in samples)
print(f"stopped after {steps} steps, mean loss {loss:.4f}, {exact}/8 decoded token-exactly")
