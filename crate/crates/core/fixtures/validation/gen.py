# Regenerates the Dec-2010 list pair: two top-500 lists sharing 485 keys.
import csv
import random

rng = random.Random(2010)
shared = ["user:top%03d" % i for i in range(485)]
theirs_only = ["user:sb%02d" % i for i in range(15)]
ours_only = ["user:ar%02d" % i for i in range(15)]

ref = {}
for i, k in enumerate(rng.sample(shared + theirs_only, 500)):
    ref[k] = int(4.0e6 * (i + 1) ** -0.9) + rng.randint(0, 50)
ours = {}
for k in shared:
    ours[k] = int(ref[k] * rng.uniform(0.92, 1.08))
lo = min(ref.values())
for k in ours_only:
    ours[k] = rng.randint(lo, 3 * lo)


def write(path, d):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["rank", "key", "subs"])
        for r, (k, v) in enumerate(sorted(d.items(), key=lambda kv: (-kv[1], kv[0])), 1):
            w.writerow([r, k, v])


write("reference_2010_12.csv", ref)
write("ours_2010_12.csv", ours)
