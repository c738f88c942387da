# Micro IoU/Dice: counts are pooled over every image before dividing.
import numpy as np

from acsseg.metrics import ConfusionAccumulator, MetricReport, summarize

rng = np.random.default_rng(0)
acc = ConfusionAccumulator(3)
for _ in range(4):
    true = rng.integers(0, 3, (32, 32))
    pred = np.where(rng.random((32, 32)) < 0.8, true, rng.integers(0, 3, (32, 32)))
    acc.accumulate(pred, true)

rep = acc.report(["background", "tumor", "stroma"])
print(rep.to_text())

# Per class Dice = 2 IoU / (1 + IoU). The class means do not obey it.
i, d = rep.mean_iou, rep.mean_dice
print("mean dice %.6f vs 2I/(1+I) %.6f" % (d, 2 * i / (1 + i)))

# Three folds -> mean and population std, printed like a results table.
folds = [MetricReport(["a"], [v], [2 * v / (1 + v)]) for v in (0.7689, 0.7662, 0.7678)]
print(summarize(folds).table_row("ACS-SegNet"))
