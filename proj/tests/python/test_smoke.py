import math

import pytest

import ctrkd


@pytest.fixture(scope="module")
def splits():
    spec = ctrkd.SyntheticSpec()
    spec.samples = 6000
    spec.fields = 6
    spec.vocab_per_field = 20
    spec.seed = 3
    return ctrkd.synthetic_splits(spec)


@pytest.fixture(scope="module")
def teacher(splits):
    return ctrkd.train_teacher(ctrkd.preset_spec("deepfm", [16], 4), splits, max_epochs=4, seed=1)


def test_splits(splits):
    assert len(splits.train) + len(splits.val) + len(splits.test) == 6000
    assert len(splits.train) == 4800
    assert splits.train.field_sizes == splits.test.field_sizes
    assert set(splits.test.labels()) <= {0.0, 1.0}


def test_auc_matches_pair_count():
    scores = [0.1, 0.4, 0.35, 0.8, 0.4]
    labels = [0, 0, 1, 1, 1]
    pairs = [(p, n) for p, yp in zip(scores, labels) if yp == 1 for n, yn in zip(scores, labels) if yn == 0]
    expected = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in pairs) / len(pairs)
    assert ctrkd.auc(scores, labels) == pytest.approx(expected, abs=1e-12)


def test_soft_label_loss_at_zero():
    for tau in (1.0, 2.0, 10.0):
        assert ctrkd.soft_label_loss(0.0, 0.0, tau) == pytest.approx(math.log(2), abs=1e-12)


def test_teacher_learns(splits, teacher):
    m = ctrkd.evaluate(teacher, splits.test)
    assert m.auc > 0.55
    probs = teacher.predict(splits.test)
    assert len(probs) == len(splits.test)
    assert all(0.0 < p < 1.0 for p in probs)


def test_student_distills(splits, teacher):
    student = ctrkd.train_student(ctrkd.preset_spec("dnn", [16], 4), [teacher], splits, tau=2.0,
                                  max_epochs=4, seed=2)
    assert ctrkd.evaluate(student, splits.test).auc > 0.55
    with pytest.raises(ValueError):
        ctrkd.train_student(ctrkd.preset_spec("dnn", [16], 4), [teacher], splits, tau=0.5)


def test_save_load_bitwise(tmp_path, splits, teacher):
    path = tmp_path / "teacher.ckpt"
    ctrkd.save_model(teacher, path, seed=1)
    back = ctrkd.load_model(path)
    assert back.spec == teacher.spec
    assert back.predict(splits.test) == teacher.predict(splits.test)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ctrkd.CheckpointError):
        ctrkd.load_model(path)


def test_run_config(tmp_path):
    text = "\n".join([
        "data.source = synthetic",
        "synthetic.samples = 1500",
        "synthetic.fields = 4",
        "synthetic.vocab_per_field = 10",
        "model.deepfm.arch = deepfm",
        "model.deepfm.hidden = 8",
        "model.dnn.arch = dnn",
        "model.dnn.hidden = 6",
        "teacher.models = deepfm",
        "student.model = dnn",
        "distill.teachers = deepfm",
        "train.max_epochs = 2",
        "train.batch_size = 128",
        f"experiment.output_dir = {tmp_path}",
    ])
    report = ctrkd.run_config(text)
    assert "kd.dnn" in report
    assert (tmp_path / "report.csv").exists()
    with pytest.raises(ctrkd.ConfigError):
        ctrkd.run_config(text, ["train.bogus=1"])
