"""Generate the synthetic anthropometric dataset shipped in data/.

The 13 body measurements load on two latent person-level factors, overall
frame size and adiposity, plus independent measurement noise; the target
(body-fat percentage by the immersion protocol, column "siri") depends on
both factors. Abdomen is deliberately the strongest single proxy for
adiposity, while frame-dominated measurements (wrist, height, weight) are
the natural second pick that corrects abdomen's frame contamination, so
minimal-subset selectors should land on two or three variables. The noise
scale on the target is tuned so that a full-model 10-fold CV RMSE comes
out near 4.4 at n=251.

Running this script rewrites data/bodyfat_synthetic.csv byte-identically.
"""

import csv
import pathlib

import numpy as np

N = 251
SEED = 20250802
TARGET_NOISE = 3.85
TARGET_MEAN = 19.1
ADIPOSITY_GAIN = 6.9
FRAME_GAIN = -1.5

# name: (mean, sd, frame loading, adiposity loading); residual loading is
# whatever remains to give the standardized column unit variance
LOADINGS = {
    "age":     (44.9, 12.6, 0.05, 0.15),
    "weight":  (178.9, 29.4, 0.80, 0.55),
    "height":  (70.1, 3.7, 0.70, -0.10),
    "neck":    (38.0, 2.4, 0.65, 0.45),
    "chest":   (100.8, 8.4, 0.45, 0.80),
    "abdomen": (92.6, 10.8, 0.32, 0.93),
    "hip":     (99.9, 7.1, 0.50, 0.75),
    "thigh":   (59.4, 5.2, 0.45, 0.70),
    "knee":    (38.6, 2.4, 0.60, 0.45),
    "ankle":   (23.1, 1.7, 0.60, 0.20),
    "biceps":  (32.3, 3.0, 0.55, 0.60),
    "forearm": (28.7, 2.0, 0.65, 0.35),
    "wrist":   (18.2, 0.9, 0.85, 0.15),
}


def generate():
    rng = np.random.default_rng(SEED)
    frame = rng.normal(size=N)
    adiposity = rng.normal(size=N)
    columns = {}
    for name, (mean, sd, b_frame, b_adip) in LOADINGS.items():
        resid = np.sqrt(1.0 - b_frame**2 - b_adip**2)
        raw = b_frame * frame + b_adip * adiposity + resid * rng.normal(size=N)
        columns[name] = mean + sd * raw
    siri = (
        TARGET_MEAN
        + ADIPOSITY_GAIN * adiposity
        + FRAME_GAIN * frame
        + TARGET_NOISE * rng.normal(size=N)
    )
    columns["age"] = np.clip(np.round(columns["age"]), 18, 81)
    for name in LOADINGS:
        if name != "age":
            columns[name] = np.round(columns[name], 1)
    columns["siri"] = np.round(siri, 1)
    return columns


def main():
    columns = generate()
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "bodyfat_synthetic.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(N):
            row = []
            for name in names:
                v = columns[name][i]
                row.append(f"{v:.0f}" if name == "age" else f"{v:.1f}")
            w.writerow(row)
    print(f"wrote {out} ({N} rows, {len(names)} columns)")


if __name__ == "__main__":
    main()
