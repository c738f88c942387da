# Walk an image through both encoders, the fusion blocks and the decoder,
# printing every feature map on the way.
import torch

from acsseg.model import ACSSegNet, ModelConfig, param_report

torch.manual_seed(0)
cfg = ModelConfig.from_scale("full")
model = ACSSegNet(cfg).eval()

x = torch.rand(1, 3, 256, 256)
with torch.no_grad():
    tr = model.trace(x)

for name, maps in [("cnn", tr.cnn), ("vit", tr.vit), ("fused", tr.fused), ("decoder", tr.decoder)]:
    for i, f in enumerate(maps):
        print(f"{name}[{i}]  stride {f.stride:2d}  {tuple(f.shape)}")
print("logits", tuple(tr.logits.shape))

# Parameter budget per block. The concat-only variant differs by the CBAM weights.
acs = param_report(model)
cs = param_report(ACSSegNet(cfg.replace(fusion_mode="concat_only")))
for k in acs:
    print(f"{k:12s} {acs[k]:>12,d} {cs[k]:>12,d}")
