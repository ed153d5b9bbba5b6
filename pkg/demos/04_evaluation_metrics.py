"""The patch-based evaluation protocol, end to end at desk scale.

Crops patches at recorded locations from "real" and "generated" panoramas,
embeds both sets with a stand-in encoder (channelwise moment statistics —
any encoder works, the metrics are feature-agnostic), and reports paired
cosine similarity (CLIP-score) and the Frechet distance between the two
embedding clouds (FID), aggregated over repeated runs.
"""

import pathlib

import numpy as np

from stitchpano import (
    Conditioning,
    EvalReport,
    MockSchedule,
    Rng,
    SamplerConfig,
    clip_score,
    collect_embeddings,
    crop_patch,
    fid,
    mock_blur,
    mock_seeded_noise,
    run,
    sample_locations,
    save_locations,
    seam_discontinuity,
)
from stitchpano.evalkit import EmbeddingSet

OUT = pathlib.Path(__file__).resolve().parent / "output"
OUT.mkdir(exist_ok=True)

STEPS = 20
PATCH_SIZE = 32
PATCH_COUNT = 200
REPEATS = 3
conditioning = Conditioning(prompt="360-degree panoramic image, rolling hills")


def toy_embedder(patch):
    """Channelwise moments over a 2x2 spatial grid: a deterministic stand-in
    for a learned image encoder (12 dims for 3 channels)."""
    data = patch.data.astype(np.float64)
    h, w = data.shape[:2]
    cells = [
        data[:h // 2, :w // 2], data[:h // 2, w // 2:],
        data[h // 2:, :w // 2], data[h // 2:, w // 2:],
    ]
    return np.concatenate([[c.mean(), c.std()] for c in cells] + [[data.mean()]], axis=0)


def make_panorama(seed, blurry):
    config = SamplerConfig(
        height=64, window_width=128, canvas_width=256, stride=16,
        steps=STEPS, seed=seed, channels=3,
    )
    schedule = MockSchedule.linear(STEPS)
    denoiser = mock_blur(2, schedule) if blurry else mock_seeded_noise(schedule)
    return run(config, denoiser, conditioning).jsyn


# "Real" references: blur-mock panoramas.  "Generated": two candidate
# systems — one from the same process (good) and one that stayed noisy (bad).
real = [make_panorama(1000 + i, blurry=True) for i in range(4)]
good = [make_panorama(2000 + i, blurry=True) for i in range(4)]
bad = [make_panorama(3000 + i, blurry=False) for i in range(4)]

clips_good, fids_good = [], []
clips_bad, fids_bad = [], []
for repeat in range(REPEATS):
    locations = sample_locations(
        (real[0].height, real[0].width), PATCH_COUNT, PATCH_SIZE,
        Rng(50 + repeat), n_images=len(real),
    )
    if repeat == 0:
        save_locations(OUT / "demo_locations.json", locations)
    real_emb = collect_embeddings(
        [crop_patch(real[loc.image_index], loc) for loc in locations], toy_embedder
    )
    for name, system, clips, fids_list in (
        ("good", good, clips_good, fids_good),
        ("bad", bad, clips_bad, fids_bad),
    ):
        system_emb = collect_embeddings(
            [crop_patch(system[loc.image_index], loc) for loc in locations], toy_embedder
        )
        clips.append(clip_score(system_emb, real_emb))
        fids_list.append(fid(system_emb, real_emb))

report_good = EvalReport.from_samples(
    clips_good, fids_good, embedding_source="toy-moments-v1",
    seam_ratio=seam_discontinuity(good[0]),
)
report_bad = EvalReport.from_samples(
    clips_bad, fids_bad, embedding_source="toy-moments-v1",
    seam_ratio=seam_discontinuity(bad[0]),
)
report_good.save(OUT / "report_good.json")
report_bad.save(OUT / "report_bad.json")

print(f"{PATCH_COUNT} patches of {PATCH_SIZE}x{PATCH_SIZE}, {REPEATS} repeats, "
      f"locations recorded to {OUT / 'demo_locations.json'}")
print(f"matched system : CLIP-score {report_good.clip_mean:.3f} +/- {report_good.clip_std:.3f}, "
      f"FID {report_good.fid_mean:8.3f} +/- {report_good.fid_std:.3f}")
print(f"noisy system   : CLIP-score {report_bad.clip_mean:.3f} +/- {report_bad.clip_std:.3f}, "
      f"FID {report_bad.fid_mean:8.3f} +/- {report_bad.fid_std:.3f}")
print("FID separates the distributions cleanly; the paired CLIP-score saturates under")
print("this toy encoder (texture moments cosine-align for both systems), which is why")
print("the protocol reports both metrics — with a learned encoder both discriminate")

# Sanity anchors: a set against itself.
self_emb = collect_embeddings(
    [crop_patch(real[0], loc) for loc in sample_locations((64, 128), 64, 16, Rng(7))],
    toy_embedder,
)
print(f"self-comparison: CLIP-score {clip_score(self_emb, EmbeddingSet(self_emb.vectors)):.1f}, "
      f"FID {fid(self_emb, EmbeddingSet(self_emb.vectors)):.6f}")
