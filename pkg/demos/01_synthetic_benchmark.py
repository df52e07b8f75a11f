"""Build a two-domain benchmark with a partial label space.

The source domain draws eight Gaussian clusters whose means sit on a
radius-5 sphere; the target domain keeps only the first four classes and
is shifted by a rotation in the first two coordinates plus a translation.
Everything is seeded: rerunning this script reproduces the files byte
for byte.
"""

import math

import numpy as np

from protoadapt import SyntheticSpec, generate_synthetic, write_feature_file

spec = SyntheticSpec(
    k_s=8, k_t=4, d_x=10,
    source_per_class=200, target_per_class=100,
    cluster_std=1.0,
    rotation_angle=math.pi / 6,
    translation=tuple([1.0 / math.sqrt(10)] * 10),
    seed=0,
)
source, target = generate_synthetic(spec)

print(f"source: {source.n} samples, {source.k_s} classes, d_x={source.d_x}")
print(f"target: {target.n} samples, hidden label space "
      f"{sorted(set(target.hidden_labels.tolist()))}")

# the domain shift in numbers: distance between per-class means
print("\nper-class mean displacement (source -> target):")
for c in range(spec.k_t):
    src_mean = source.features[source.labels == c].mean(axis=0)
    tgt_mean = target.features[target.hidden_labels == c].mean(axis=0)
    print(f"  class {c}: {np.linalg.norm(tgt_mean - src_mean):.3f}")

write_feature_file(source, "source.features")
write_feature_file(target, "target.features")
print("\nwrote source.features / target.features")
print("note: the target file stores true labels only as trailing '#' comments;"
      "\ntraining code never sees them, the evaluator does.")
