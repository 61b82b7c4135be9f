def lr_schedule(epoch: int, base_lr: float, cfg=None) -> float:
    """
    Constant learning rate until ``decay_start_epoch``, then divided by
    ``decay_factor`` once per epoch:

        lr = base_lr                                      epoch < start
        lr = base_lr / factor ** (epoch - start + 1)      epoch >= start

    Parameters
    ----------
        epoch : int
            Zero based epoch index.
        base_lr : float
        cfg : TrainConfig, optional
            Source of decay_start_epoch and decay_factor (40 and 1.1 when
            omitted).

    Examples
    --------
    >>> lr_schedule(39, 1e-4) == 1e-4
    True
    >>> lr_schedule(41, 1e-4) == 1e-4 / 1.1**2
    True
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    start = 40 if cfg is None else cfg.decay_start_epoch
    factor = 1.1 if cfg is None else cfg.decay_factor
    if epoch < start:
        return base_lr
    return base_lr / factor ** (epoch - start + 1)
