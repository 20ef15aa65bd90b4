"""End to end on a small synthetic world: pretrain, train, predict, evaluate.

The settings are shrunk so this finishes in well under a minute on a laptop.
Run:  python demos/02_pipeline.py
"""

from scenegraph3d.evaluation import build_report, lookup
from scenegraph3d.scene import SyntheticConfig, generate_dataset
from scenegraph3d.trainer import TrainConfig, predict, run_pretraining, run_sg_training

world = SyntheticConfig(n_scenes=16, val_fraction=0.25, n_obj=4, exclusive=True, seed=0)
train, val = generate_dataset(world)
print(f"{len(train)} train / {len(val)} val scenes, {world.n_obj} classes, {world.n_pred} predicates")

cfg = TrainConfig(heads=4, iterations=1, n_points=128, pretrain_epochs=20, pretrain_batch=16, epochs=40, lr=1e-3)

pre = run_pretraining(train, val, cfg, n_obj=world.n_obj)
last = pre.history[pre.best_epoch]
print(f"pretraining: best epoch {pre.best_epoch}, val top-1 {last.get('val_top1', float('nan')):.1f}")

sg = run_sg_training(train, val, cfg, pre.store.state_dict(), n_obj=world.n_obj, n_pred=world.n_pred)
print(f"scene-graph training: best epoch {sg.best_epoch}, final loss {sg.history[-1]['loss']:.4f}")

rows = build_report(predict(val, sg.store, cfg, world.n_pred), ks=[1, 5, 50])
for metric, k, constraint in [
    ("object_R", 1, "n/a"),
    ("predicate_R", 1, "n/a"),
    ("triplet_R", 50, "graph"),
    ("triplet_R", 50, "none"),
    ("triplet_mR", 50, "none"),
]:
    print(f"{metric:12s} @{k:<3d} {constraint:6s} {lookup(rows, metric, k, constraint):6.2f}")
