import csv
import os
import re
from pathlib import Path

import numpy as np
import pytest

from conftest import write_toy_dataset
from mixprivacy.imgcore import load_image, save_image
from mixprivacy.metrics import score_sample
from mixprivacy.obfuscate import ObfuscationParams, Scheme
from mixprivacy.pipeline import (
    SURVEY_3WAY,
    SURVEY_BLOCK,
    SURVEY_KSIZE,
    SURVEY_LAMBDAS,
    SURVEY_P,
    SURVEY_PIXEL,
    SURVEY_SIGMA,
    DataError,
    Dataset,
    EpochConfig,
    Gate,
    GateError,
    generate_survey_samples,
    plan_epoch,
    read_private,
    read_public,
    run_epoch,
    run_epochs,
)

SIZE = (32, 32)
NOISE = ObfuscationParams(Scheme.NOISE, (0.75, 0.25), sigma=20.0)


@pytest.fixture(scope="module")
def toy(tmp_path_factory, photos):
    rng = np.random.default_rng(4)
    images = [photos.crop(rng, 32) for _ in range(12)]
    labels = [k % 4 for k in range(12)]
    return write_toy_dataset(tmp_path_factory.mktemp("toy"), images, labels)


@pytest.fixture
def ds(toy):
    return Dataset.open(toy, SIZE)


def _tree(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestDataset:
    def test_csv(self, ds):
        assert len(ds) == 12 and ds.num_classes == 4
        img = ds.image(0)
        assert img.shape == (32, 32, 3) and not img.flags.writeable

    def test_resize(self, toy):
        assert Dataset.open(toy, (20, 16)).image(3).shape == (16, 20, 3)

    def test_dir_layout(self, tmp_path, rng):
        for cls in ("cat", "dog"):
            (tmp_path / cls).mkdir()
            for k in range(2):
                save_image(rng.uniform(0, 255, (8, 8, 3)), tmp_path / cls / f"{k}.png")
        d = Dataset.open(tmp_path, (8, 8))
        assert [e.label for e in d.entries] == [0, 0, 1, 1]
        assert d.entries[2].id == "dog/0.png"

    def test_bad_csv(self, tmp_path):
        (tmp_path / "d.csv").write_text("file,class\na.png,0\n")
        with pytest.raises(DataError):
            Dataset.open(tmp_path / "d.csv", SIZE)
        (tmp_path / "e.csv").write_text("path,label\na.png,x\n")
        with pytest.raises(DataError, match=":2"):
            Dataset.open(tmp_path / "e.csv", SIZE)
        with pytest.raises(DataError):
            Dataset.open(tmp_path / "missing.csv", SIZE)


class TestPlan:
    def test_disjoint_four(self, toy):
        d = Dataset.open(toy, SIZE)
        d4 = Dataset(d.entries[:4], SIZE)
        pairs = plan_epoch(d4, EpochConfig(NOISE))
        assert len(pairs) == 2
        assert sorted(i for p in pairs for i in p) == [0, 1, 2, 3]

    def test_disjoint_odd_rotates(self, ds):
        d5 = Dataset(ds.entries[:5], SIZE)
        skipped = []
        for e in range(5):
            pairs = plan_epoch(d5, EpochConfig(NOISE, epoch_index=e))
            used = [i for p in pairs for i in p]
            assert len(used) == len(set(used)) == 4
            skipped.append(({0, 1, 2, 3, 4} - set(used)).pop())
        assert sorted(skipped) == [0, 1, 2, 3, 4]

    def test_permutation(self, ds):
        pairs = plan_epoch(ds, EpochConfig(NOISE, pairing="permutation"))
        assert len(pairs) == len(ds)
        assert all(i != j for i, j in pairs)
        assert sorted(i for i, _ in pairs) == list(range(len(ds)))

    def test_intra(self, ds):
        d6 = Dataset([e for e in ds.entries if e.label in (0, 1)], SIZE)
        for pairing in ("disjoint", "permutation"):
            pairs = plan_epoch(d6, EpochConfig(NOISE, pairing=pairing, class_mode="intra"))
            assert pairs
            assert all(d6.entries[i].label == d6.entries[j].label for i, j in pairs)

    def test_intra_singleton(self, ds):
        d = Dataset(ds.entries[:5], SIZE)  # class 0 twice, others once
        with pytest.raises(DataError):
            plan_epoch(d, EpochConfig(NOISE, class_mode="intra"))

    def test_seeded(self, ds):
        assert plan_epoch(ds, EpochConfig(NOISE, master_seed=3)) == plan_epoch(ds, EpochConfig(NOISE, master_seed=3))
        assert plan_epoch(ds, EpochConfig(NOISE, master_seed=3)) != plan_epoch(ds, EpochConfig(NOISE, master_seed=4))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EpochConfig(NOISE, pairing="random")
        with pytest.raises(ValueError):
            Gate("dssim", 1.5)
        with pytest.raises(ValueError):
            Gate("fid", 1.0)
        with pytest.raises(ValueError):
            Gate("dssim", 0.5, max_attempts=0)


class TestRunEpoch:
    def test_layout_and_manifests(self, ds, tmp_path):
        m = run_epoch(ds, EpochConfig(NOISE, master_seed=1), tmp_path)
        ed = tmp_path / "epoch_0"
        assert {p.name for p in ed.iterdir()} >= {"public.csv", "private.csv", "summary.json"}
        pub, priv = read_public(ed / "public.csv"), read_private(ed / "private.csv")
        assert len(pub) == len(priv) == 6
        assert [p.file for p in pub] == [p.file for p in priv]
        assert all(re.fullmatch(r"\d{6}\.png", p.file) for p in pub)
        assert priv[0].weights == (0.75, 0.25)
        if os.name == "posix":
            assert (ed / "private.csv").stat().st_mode & 0o077 == 0
        assert m.stats()["accepted"] == 6

    def test_public_has_no_secrets(self, ds, tmp_path):
        run_epoch(ds, EpochConfig(NOISE), tmp_path)
        with (tmp_path / "epoch_0" / "public.csv").open() as fh:
            header = next(csv.reader(fh))
        assert header == ["file", "label"]
        assert not {"weights", "lambdas", "seed", "seeds", "sources"} & set(header)

    def test_deterministic(self, ds, tmp_path):
        cfg = EpochConfig(NOISE, master_seed=9)
        run_epoch(ds, cfg, tmp_path / "a")
        run_epoch(ds, cfg, tmp_path / "b", workers=4)
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")

    @pytest.mark.parametrize("params", [
        NOISE,
        ObfuscationParams(Scheme.SHUFFLE, (0.6, 0.4), b=4),
        ObfuscationParams(Scheme.GRAFT, (0.6, 0.4), p=0.5),
    ], ids=lambda p: p.scheme.value)
    def test_epochs_fresh(self, ds, tmp_path, params):
        ms = run_epochs(ds, EpochConfig(params, pairing="permutation"), tmp_path, 2)
        a, b = (_tree(tmp_path / f"epoch_{e}") for e in range(2))
        assert any(a[f] != b[f] for f in a if f.endswith(".png"))
        # same pair in both epochs gives a different image
        first = {m.sources: m.file for m in ms[0].private}
        common = [(first[m.sources], m.file) for m in ms[1].private if m.sources in first]
        for fa, fb in common:
            assert a[fa] != b[fb]

    def test_gate_rescore(self, ds, tmp_path):
        gate = Gate("dssim", 0.25)
        run_epoch(ds, EpochConfig(NOISE, gate=gate), tmp_path)
        ed = tmp_path / "epoch_0"
        accepted = read_private(ed / "private.csv")
        assert accepted
        for e in accepted:
            value = score_sample(load_image(ed / e.file), [ds.image_by_id(s) for s in e.sources], "dssim")
            assert abs(value - e.score) <= 1e-9
            assert value >= 0.25

    def test_unreachable_gate(self, ds, tmp_path):
        with pytest.raises(GateError):
            run_epoch(ds, EpochConfig(ObfuscationParams(Scheme.MIX, (0.9, 0.1)), gate=Gate("dssim", 0.99, 2)), tmp_path)
        assert not (tmp_path / "epoch_0").exists()

    def test_lambda_grid(self, ds, tmp_path):
        m = run_epoch(ds, EpochConfig(ObfuscationParams(Scheme.MIX), lambda_grid=(0.5, 0.7)), tmp_path)
        assert {e.weights[0] for e in m.private} <= {0.5, 0.7}


class TestSurvey:
    def test_six(self, ds, tmp_path):
        m = generate_survey_samples(ds, 6, 0, tmp_path)
        assert sorted(e.scheme for e in m.private) == sorted(s.value for s in Scheme)
        assert len(list(tmp_path.glob("q*.png"))) == 6

    def test_grid_membership(self, ds, tmp_path):
        m = generate_survey_samples(ds, 48, 5, tmp_path)
        exact_3way = {tuple(round(float(x), 9) for x in exact) for _, exact in SURVEY_3WAY}
        for e in m.private:
            params = dict(kv.split("=", 1) for kv in e.params.split(";") if kv)
            if len(e.weights) == 3:
                assert tuple(round(w, 9) for w in e.weights) in exact_3way
            else:
                assert e.weights[0] in SURVEY_LAMBDAS
            if e.scheme == "graft-mix":
                assert float(params["p"]) in SURVEY_P
            elif e.scheme == "shuffle-mix":
                assert int(params["b"]) in SURVEY_BLOCK
            elif e.scheme == "noise-mix":
                assert float(params["sigma"]) in SURVEY_SIGMA
            elif e.scheme == "pixelize-mix":
                assert int(params["b"]) in SURVEY_PIXEL
            elif e.scheme == "blur-mix":
                assert int(params["ksize"]) in SURVEY_KSIZE
            labels = {ds.entries[ds._by_id[s]].label for s in e.sources}
            assert len(labels) == len(e.sources)

    def test_deterministic(self, ds, tmp_path):
        generate_survey_samples(ds, 7, 3, tmp_path / "a")
        generate_survey_samples(ds, 7, 3, tmp_path / "b")
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")

    def test_needs_three_classes(self, ds, tmp_path):
        d = Dataset([e for e in ds.entries if e.label < 2], SIZE)
        with pytest.raises(DataError):
            generate_survey_samples(d, 6, 0, tmp_path)
