"""Fit the network to one synthetic street pair, then thin out its LiDAR.

Generates a 64x96 scene with two frames, trains for a few hundred steps (pass a
step count to change that) and reports next-frame PSNR/SSIM with the full sparse
depth and with half of the returns removed at test time. Writes the renders to
demo_out/.

    python demos/overfit_and_drop_depth.py 300
"""

import sys
import time
from pathlib import Path

from streetsplat.evaluate import evaluate
from streetsplat.scene_io import SyntheticSceneConfig, generate_synthetic_scene
from streetsplat.train import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
scene = generate_synthetic_scene(SyntheticSceneConfig(seed=0, n_frames=2))
src = scene.frames[0]
print(f"scene {scene.id}: {src.image.shape[1]}x{src.image.shape[0]} px, "
      f"{(src.sparse_depth > 0).mean():.1%} of pixels carry LiDAR depth")

t0 = time.perf_counter()
result = train([scene], TrainConfig(total_steps=steps, lr_init=1e-3),
               progress=lambda e: e["step"] % 50 == 0 and print(f"  step {e['step']:5d}  loss {e['total']:.5f}"))
print(f"trained {steps} steps in {time.perf_counter() - t0:.0f} s")

out = Path("demo_out")
for protocol in ("next_frame", "depth_drop:0.5"):
    row = evaluate(result.model, [scene], protocol, export_dir=out)[0]
    print(f"{protocol:>15}: PSNR {row.psnr:6.2f} dB  SSIM {row.ssim:.4f}")
print(f"renders in {out}/{scene.id}/")
