import pytest


def test_constant_then_decay():
    from ratervar.train.schedule import lr_schedule

    assert all(lr_schedule(e, 1e-4) == 1e-4 for e in range(40))
    assert lr_schedule(40, 1e-4) == pytest.approx(1e-4 / 1.1)
    assert lr_schedule(99, 0.02) == pytest.approx(0.02 / 1.1**60)


def test_schedule_reads_config():
    from ratervar.train.config import TrainConfig
    from ratervar.train.schedule import lr_schedule

    cfg = TrainConfig(decay_start_epoch=2, decay_factor=2.0)
    assert [lr_schedule(e, 1.0, cfg) for e in range(5)] == [1.0, 1.0, 0.5, 0.25, 0.125]


def test_negative_epoch():
    from ratervar.train.schedule import lr_schedule

    with pytest.raises(ValueError):
        lr_schedule(-1, 1e-4)
