import json

import numpy as np
import pytest
import torch

from cocolor import PATHS
from cocolor.data import synth_dataset
from cocolor.evaluation import (
    MetricsReport,
    evaluate,
    identity_n2g_psnr,
    mean_rgb_baseline_psnr,
    path_io,
    save_preview,
)
from cocolor.metrics import psnr
from cocolor.nets import ModelBundle


class OracleBundle:
    """Returns the ground truth for each input, found by its bytes."""

    def __init__(self, samples, path):
        self.table = {}
        for s in samples:
            x, gt = path_io(s, path)
            self.table[np.asarray(x, np.float32).tobytes()] = gt

    def run_path(self, path, x):
        return torch.from_numpy(np.stack([self.table[xi.numpy().tobytes()] for xi in x]))


@pytest.fixture(scope="module")
def samples():
    return synth_dataset(3, 6, 4, 16)


@pytest.mark.parametrize("path", ["N2C", "N2G2C", "G2N2C", "G2C"])
def test_oracle_bundle_rgb(samples, path):
    paired, gray = samples
    ds = paired if path.startswith("N") else paired + gray
    rep = evaluate(OracleBundle(ds, path), ds, path)
    assert rep.mean["psnr"] == 99.0
    assert rep.mean["ssim"] == pytest.approx(1.0, abs=1e-9)
    assert rep.mean["ae"] == pytest.approx(0.0, abs=0.05)


def test_n2g_omits_ae(samples):
    paired, _ = samples
    rep = evaluate(OracleBundle(paired, "N2G"), paired, "N2G")
    assert not rep.has_ae and "ae" not in rep.mean
    assert all(r.ae is None for r in rep.records)
    assert all("ae" not in json.loads(line) for line in rep.to_lines()[:-1])


def test_aggregates_match_records(samples, tmp_path):
    paired, _ = samples
    bundle = ModelBundle(16, 4, seed=0)
    rep = evaluate(bundle, paired, "N2C", dataset_tag="synthetic")
    out = tmp_path / "report.jsonl"
    rep.write(out)
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    footer, recs = lines[-1], lines[:-1]
    assert footer["n"] == len(recs) == len(paired)
    for key in ("psnr", "ssim", "ae"):
        assert footer["aggregate"][key] == pytest.approx(np.mean([r[key] for r in recs]), abs=1e-12)
    assert footer["lpips"] == "absent"
    assert footer["checkpoint_digest"] == bundle.digest()
    assert footer["dataset"] == "synthetic"


def test_report_read_roundtrip(samples, tmp_path):
    paired, _ = samples
    rep = evaluate(ModelBundle(16, 4), paired, "N2G", checkpoint_digest="abc")
    rep.write(tmp_path / "r.jsonl")
    back = MetricsReport.read(tmp_path / "r.jsonl")
    assert back.records == rep.records and back.checkpoint_digest == "abc"


def test_report_invariants(samples):
    paired, _ = samples
    rep = evaluate(ModelBundle(16, 4, seed=1), paired, "N2G2C")
    for r in rep.records:
        assert r.psnr >= 0 and -1 <= r.ssim <= 1 and 0 <= r.ae <= 180


def test_n_path_needs_nir(samples):
    _, gray = samples
    with pytest.raises(ValueError):
        evaluate(ModelBundle(16, 4), gray, "N2C")


def test_g2n_needs_nir_ground_truth(samples):
    _, gray = samples
    with pytest.raises(ValueError):
        evaluate(ModelBundle(16, 4), gray, "G2N")


def test_empty(samples):
    with pytest.raises(ValueError):
        evaluate(ModelBundle(16, 4), [], "N2C")


def test_unknown_path(samples):
    with pytest.raises(ValueError):
        evaluate(ModelBundle(16, 4), samples[0], "C2N")


def test_all_paths_run(samples):
    paired, _ = samples
    for path in PATHS:
        rep = evaluate(ModelBundle(16, 4), paired, path)
        assert len(rep.records) == len(paired)
        assert rep.has_ae == path.endswith("C")


def test_baselines(samples):
    paired, _ = samples
    mean = np.mean([s.rgb.mean(axis=(1, 2)) for s in paired], axis=0)
    expected = np.mean([psnr(np.broadcast_to(mean[:, None, None], s.rgb.shape), s.rgb) for s in paired])
    assert mean_rgb_baseline_psnr(paired, paired) == pytest.approx(expected)
    assert identity_n2g_psnr(paired) == pytest.approx(np.mean([psnr(s.nir, s.gray) for s in paired]))


def test_preview(samples, tmp_path):
    from PIL import Image

    paired, _ = samples
    save_preview(ModelBundle(16, 4), paired[:3], "N2C", tmp_path / "p.png")
    img = Image.open(tmp_path / "p.png")
    assert img.size == (48, 48) and img.mode == "RGB"
