"""Train a deliberately tiny model for two epochs, then classify and retrieve with it.

Run: python tutorials/03_train_and_retrieve.py   (about a minute on one core)
"""
from eventcrab.config import benchmark_config
from eventcrab.head import retrieve
from eventcrab.model import EventDataset
from eventcrab.trainer import evaluate, train

cfg = benchmark_config(seed=1).with_overrides(
    data={"num_classes": 4, "samples_per_class": 10},
    point={"dim": 16, "depth": 1},
    frame={"dim": 16},
    train={"epochs": 2, "batch_size": 8},
)
data = EventDataset.synthetic(cfg)

# Two epochs on 40 recordings is far from converged; the point is the API.
# Each epoch logs losses of both branches and test accuracy of the fused, point and frame features.
result = train(cfg, data, log=lambda rec: print(f"epoch {rec['epoch']}: loss {rec['loss']:.3f}, "
                                              f"top-1 {rec['top1']:.3f}, point-only {rec['point_top1']:.3f}"))
print(f"final top-1 {result.final.top1:.3f}, top-5 {result.final.top5:.3f}")

# Fused test features are unit vectors; retrieval ranks them by cosine similarity.
ev = evaluate(result.model, data, "test")
for rank, hit in enumerate(retrieve(ev.fused[0], ev.fused, k=3), 1):
    print(f"rank {rank}: test sample {hit.index}, score {hit.score:.3f}")
