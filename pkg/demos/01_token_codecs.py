"""Walk through the four token codecs: palette, patch VQ, box bins, BPE.

Run:  python demos/01_token_codecs.py
"""
import numpy as np

from visq.boxes import Box, box_decode, box_encode
from visq.bpe import bpe_decode, bpe_encode, bpe_train
from visq.palette import decode_labels, encode_labels, palette_for_classes
from visq.vq import fit_patch_codebook, vq_decode, vq_encode

print("== class-color palette ==")
palette = palette_for_classes(4)
print("4 classes map to corners of the RGB cube:")
for k, color in enumerate(palette):
    print(f"  class {k} -> {tuple(int(c) for c in color)}")

labels = np.array([[0, 1], [2, 3]])
img = encode_labels(labels, palette)
print("a 2x2 label map paints to colors and decodes back exactly:",
      np.array_equal(decode_labels(img, palette), labels))

print("\n== patch vector quantizer ==")
rng = np.random.default_rng(0)
blocks = np.zeros((8, 32, 3), dtype=np.uint8)
for i, color in enumerate([(0, 0, 0), (255, 0, 0), (0, 255, 0), (0, 0, 255)] * 2):
    blocks[:, i * 4 : (i + 1) * 4] = color
codebook = fit_patch_codebook([blocks], n_entries=4, patch_size=4, iters=5, seed=0)
print("objective trace while fitting 4 entries to 4 distinct patch colors:",
      [round(o, 6) for o in codebook.fit_objectives])
grid = vq_encode(blocks, codebook)
print("token grid:", grid.tolist())
print("decode is pixel-exact on codebook-tiled images:",
      np.array_equal(vq_decode(grid, codebook), blocks))

print("\n== box -> positional tokens ==")
box = Box(0.12, 0.3, 0.55, 0.9)
ids = box_encode(box, bins=100)
decoded, swapped = box_decode(ids, bins=100)
print(f"box {box.coords()} -> ids {ids} -> {tuple(round(c, 3) for c in decoded.coords())}")
print("max roundtrip error:",
      max(abs(a - b) for a, b in zip(box.coords(), decoded.coords())), "<= 1/(2*100)")

print("\n== byte-pair text tokens ==")
model = bpe_train(["a red circle and a blue square"] * 4, vocab_size=300)
text = "a red triangle"  # unseen during training
ids = bpe_encode(model, text)
print(f"{text!r} -> {len(ids)} tokens -> {bpe_decode(model, ids)!r}")
print("byte fallback keeps any string lossless:",
      bpe_decode(model, bpe_encode(model, "emoji \U0001f600 works")) == "emoji \U0001f600 works")
