"""Generate shapes-world scenes and inspect every task annotation.

Run:  python demos/02_shapes_world.py
Writes sample images to demos/output/.
"""
from pathlib import Path

import numpy as np

from visq.data import TaskRatios, build_target, fit_codecs
from visq.imageio import write_ppm
from visq.instructions import load_corpus
from visq.palette import encode_labels, palette_for_classes
from visq.scenes import NUM_CLASSES, generate_scene
from visq.vocab import build_layout, to_local

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

scene = generate_scene(7)
print("scene 7:")
for obj in scene.objects:
    print(f"  {obj.size} {obj.color} {obj.shape} at ({obj.cx}, {obj.cy})")
print("caption:", scene.caption)
print("boxes:", [tuple(round(c, 3) for c in b.coords()) for b in scene.boxes])

write_ppm(out / "scene.ppm", scene.image)
write_ppm(out / "scene_labels.ppm",
          encode_labels(scene.label_map, palette_for_classes(NUM_CLASSES)))
print(f"wrote {out / 'scene.ppm'} and its palette-coded label map")

print("\nfitting codecs on 40 scenes (patch codebook + BPE) ...")
corpus = load_corpus()
codecs = fit_codecs([generate_scene(i) for i in range(40)], corpus,
                    build_layout(3, 128, 100, 512), iters=20, seed=0)

rng = np.random.default_rng(0)
for task in ("semseg", "res", "rec", "caption"):
    sample = build_target(task, scene, rng, codecs, corpus)
    kinds = {to_local(codecs.layout, t)[0] for t in sample.target_tokens[1:-1]}
    print(f"\n{task}: instruction = {sample.instruction!r}")
    print(f"  target: {len(sample.target_tokens)} tokens (BOS ... EOS), kinds {kinds}")

print("\ntask sampling under the default ratios:")
ratios = TaskRatios()
print(" ", ratios.normalized())
