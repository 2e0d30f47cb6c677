"""How the long/short split changes the copying problem.

Runs the copying task at delay T = 100 for three splits of a 100-unit
state and reports the first iteration where the cross-entropy drops
below the memoryless baseline.  Takes well under a minute.
"""

from enrnn.tasks import baseline_value
from enrnn.training import TrainConfig, train

baseline = baseline_value("copying", 100)
print(f"baseline 10 ln 8 / 120 = {baseline:.4f}")
for split in (100, 80, 50):
    config = TrainConfig(task="copying", seq_len=100, hidden=100, split=split, batch_size=20,
                         iterations=300, train_size=5000, test_size=200, eval_every=5,
                         stop_loss=baseline, seed=0)
    result = train(config)
    hit = result.metrics.first_below(baseline)
    print(f"long {split:3d} / short {100 - split:3d}: below baseline at iteration {hit}")
