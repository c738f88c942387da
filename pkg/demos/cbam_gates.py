# What the two attention gates do to a feature map.
import torch

from acsseg.model import CBAM

torch.manual_seed(1)
f = torch.randn(1, 16, 8, 8)
f[:, 3] += 4.0          # one loud channel
f[:, :, 2, 5] += 6.0    # one loud location

m = CBAM(16, reduction=4, kernel_size=3)
with torch.no_grad():
    cg = m.channel(f)
    sg = m.spatial(f * cg)
    out = m(f)

print("channel gate:", [round(v, 3) for v in cg.flatten().tolist()])
print("spatial gate at the loud pixel %.3f, mean %.3f" % (sg[0, 0, 2, 5], sg.mean()))
# Both gates are sigmoids, so the output never grows in magnitude.
print("max |out| / |in|:", float((out.abs() / f.abs().clamp_min(1e-12)).max()))

# With all weights zeroed each gate is exactly 0.5.
for p in m.parameters():
    torch.nn.init.zeros_(p)
print("zeroed gates give 0.25*f:", torch.equal(m(f), 0.25 * f))
