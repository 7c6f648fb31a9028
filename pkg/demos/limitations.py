"""Where the flash cue breaks down.

1. Distant transmission: flash irradiance falls with the square of the
   distance, so a far-away scene behind the glass receives almost no flash
   and the flash-only image goes black except for whatever the flash hits.
2. Flash and ambient light of different colors: the flash-only image is
   correctly reflection-free but has the wrong color cast.

    python demos/limitations.py
"""

from dataclasses import replace

from flashsep import rng
from flashsep.scene_sim import random_scene, render_scene

base = random_scene(rng.stream(2, "limits"), "standard", 64)

print("distance  mean T_fo   (one quantization step = %.2e)" % render_scene(base).raw_a.quantization_step)
for d in (0.5, 1, 2, 4, 8, 16, 32):
    s = render_scene(replace(base, d_t=float(d), d_r=float(d)))
    print(f"{d:8.1f}  {s.t_fo.mean():.2e}")

s = render_scene(replace(base, flash_color=(0.6, 0.8, 1.0), ambient_color=(1.0, 0.85, 0.55)))
ratio = s.t_fo.mean(axis=(0, 1)) / s.t_a.mean(axis=(0, 1))
print("per-channel T_fo / T_a with a bluish flash under warm light:",
      " ".join(f"{c}={v:.3f}" for c, v in zip("RGB", ratio)))
