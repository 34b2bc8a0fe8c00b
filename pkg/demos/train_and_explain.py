"""Train a small model on ShapeConcepts and look at what it attends to.

Takes about two minutes on one core: 1200 images, 8 epochs. The heatmaps
land in ``demo_out/maps`` as ASCII PGM files that most image viewers open.
"""

from pathlib import Path

from ascent_vit.data import SHAPES, ShapeConceptsSpec, build_dataset, generate_shapeconcepts, split
from ascent_vit.evaluation import evaluate, export_maps
from ascent_vit.model import AscentViT, ModelConfig
from ascent_vit.trainer import TrainConfig, train

OUT = Path("demo_out")

samples = generate_shapeconcepts(ShapeConceptsSpec(seed=7, n_samples=1200))
data = build_dataset(samples, patch_size=4)
train_set, val_set, _ = split(data, (0.8, 0.2, 0.0), seed=7)
print(f"{len(train_set)} training and {len(val_set)} validation images")

model = AscentViT(ModelConfig(), 0)
result = train(model, train_set, val_set, TrainConfig(epochs=8, warmup_epochs=1, seed=0),
               out_dir=OUT)
for row in result.log:
    print(f"epoch {row[0]:2d}  loss {row[3]:.3f}  val acc {row[7]:.3f}  px tpr {row[8]:.3f}")

report = evaluate(model, val_set, batch_size=100, concept_names=list(SHAPES))
print(f"task accuracy {report.task_accuracy.value:.3f}")
for name, rate in report.px_tpr.items():
    print(f"  Px. TPR {name:9s} {rate.value:.3f}  ({rate.numerator}/{rate.denominator} pixels)")

# one heatmap per shape concept for the first few validation images
(OUT / "maps").mkdir(parents=True, exist_ok=True)
attention = model(val_set.images[:4]).a_spatial.data
for i, a in enumerate(attention):
    export_maps(a, OUT / "maps" / f"sample{i}", val_set.patch_size)
print(f"heatmaps written to {OUT / 'maps'}")
