"""Render one synthetic hand-proxy mesh to a depth map and print it as text.

Run: python3 demos/render_sample.py [seed]
"""
import sys

import numpy as np

from meshgcn import synth
from meshgcn.render import render_depth

SHADES = " .:-=+*#%@"


def main(seed):
    tmpl = synth.make_template()
    s = synth.generate_sample(tmpl, seed)
    d = render_depth(s.mesh3d, tmpl.topology.faces, s.camera).data
    print(f"seed {seed}: root depth {s.root_scale.root_depth:.1f}, scale {s.root_scale.scale:.2f}")
    fg = d < 1
    lo, hi = d[fg].min(), d[fg].max()
    for row in d:
        # nearer pixels are denser characters
        print("".join(" " if v >= 1 else SHADES[-1 - int((v - lo) / (hi - lo + 1e-12) * (len(SHADES) - 2))]
                      for v in row))
    print(f"{fg.sum()} foreground pixels; stored map identical: {np.array_equal(d.astype(np.float32), s.depth)}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
