# What each attention module actually does to a feature map, on numbers
# small enough to eyeball.

import numpy as np

from lapx.attention import CbamSpatial, EcaChannel, EcaCbam, EcaNonLocal, NonLocalSpatial
from lapx.engine import Tensor, no_grad

rng = np.random.default_rng(0)
x = rng.standard_normal((1, 8, 4, 4)).astype(np.float32)
x[0, 3] += 3.0  # one loud channel
x[0, :, 1, 2] += 3.0  # one loud position

with no_grad():
    eca = EcaChannel(rng)
    y = eca(Tensor(x)).data
    scale = (y / x)[0, :, 0, 0]
    print("channel gates (one scalar per channel, loud channel is #3):")
    print(np.round(scale, 3))

    cbam = CbamSpatial(rng)
    y = cbam(Tensor(x)).data
    print("\nspatial gate (one scalar per position, loud position is (1,2)):")
    print(np.round((y / x)[0, 0], 3))

    # the all-pairs module starts as an exact identity: gamma is zero
    nl = NonLocalSpatial(rng, 8)
    y = nl(Tensor(x)).data
    print("\nall-pairs attention at gamma=0, max |y-x|:", np.abs(y - x).max())

    nl.gamma.data[...] = 0.5
    y = nl(Tensor(x)).data
    print("after setting gamma=0.5, max |y-x|:", float(np.abs(y - x).max()))

    # the composites are literally channel-then-spatial
    combo = EcaCbam(rng)
    manual = combo.spatial(combo.channel(Tensor(x))).data
    print("\nEcaCbam == spatial(channel(x)):",
          np.array_equal(combo(Tensor(x)).data, manual))

    combo = EcaNonLocal(rng, 8)
    combo.spatial.gamma.data[...] = 0.3
    manual = combo.spatial(combo.channel(Tensor(x))).data
    print("EcaNonLocal == allpairs(channel(x)):",
          np.array_equal(combo(Tensor(x)).data, manual))

print("\nparameter counts:")
for name, mod in [("eca", EcaChannel(rng)), ("cbam", CbamSpatial(rng)),
                  ("nonlocal c=16", NonLocalSpatial(rng, 16))]:
    n = sum(p.data.size for _, p in mod.named_params())
    print(f"  {name:14s} {n}")
