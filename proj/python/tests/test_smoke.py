import json

import numpy as np
import pytest

import jex


def test_param_count_defaults():
    assert jex.param_count() == (9_830_400_000, 51_409_880)


def test_tucker_fuse_matches_einsum():
    rng = np.random.default_rng(0)
    q = rng.normal(size=4)
    v = rng.normal(size=(3, 5))
    core = rng.normal(size=(2, 3, 6))
    tau_q = rng.normal(size=(4, 2))
    tau_v = rng.normal(size=(5, 3))
    want = np.einsum("ijk,a,ai,rb,bj->rk", core, q, tau_q, v, tau_v)
    np.testing.assert_allclose(jex.tucker_fuse(q, v, core, tau_q, tau_v), want, atol=1e-12)


def test_maxpool_and_nearest():
    assert jex.maxpool1d([1, 5, 2, 7, 3], 2) == [5, 7]
    pts = np.array([[0, 0], [1, 1], [1, 1]], dtype=np.float32)
    assert jex.nearest(pts, [0.9, 0.9]) == 1


def test_toy_pipeline(tmp_path):
    toy = tmp_path / "toy"
    n = jex.generate_toy(str(toy), seed=2, train_scenes=40, val_scenes=20)
    assert n == 180
    manifest = jex.split(
        [toy / "instances_train.json", toy / "instances_val.json"],
        [toy / "questions_train.json", toy / "questions_val.json"],
        [toy / "annotations_train.json", toy / "annotations_val.json"],
    )
    truth = json.loads((toy / "truth_manifest.json").read_text())
    for key in ("unknown_categories", "trainset", "testset", "valset_known", "valset_unknown"):
        assert manifest[key] == truth[key]

    grid, pooled = jex.load_features(str(toy / "features" / "1.jexf"))
    assert grid.shape == (16, 16)
    assert pooled.shape == (1, 16)

    args = ["train", "--preset", "toy", "--epochs", "1", "--stage2-epochs", "1",
            "--manifest", str(toy / "truth_manifest.json"), "--features", str(toy / "features"),
            "--out", str(tmp_path / "model")]
    for s in ("train", "val"):
        args += ["--questions", str(toy / f"questions_{s}.json"),
                 "--annotations", str(toy / f"annotations_{s}.json")]
    code, _, err = jex.run_cli(args)
    assert code == 0, err

    model = jex.Predictor(str(tmp_path / "model" / "jex.jexm"), str(tmp_path / "model" / "store.jexs"))
    assert model.variant == "jex"
    out = model.answer(str(toy / "features" / "1.jexf"), "Is there a dog?")
    assert isinstance(out["answer"], str)
    for maps in (out["alpha_iq"], out["alpha_e"]):
        for a in maps:
            assert sum(a) == pytest.approx(1.0, abs=1e-6)

    with pytest.raises(jex.DataError):
        jex.Predictor(str(tmp_path / "model" / "jex.jexm"))


def test_errors():
    with pytest.raises(jex.DataError):
        jex.load_features("/no/such/file.jexf")
    code, _, err = jex.run_cli(["frobnicate"])
    assert code == 1 and err
