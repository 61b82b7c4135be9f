import concurrent.futures
import os
from functools import wraps


def parallelize(func=None, *, maxWorkers=None):
    """
    Decorator turning a function of one item into a function of a list of
    items, evaluated on a thread pool. Results come back in input order so
    seeded pipelines stay reproducible whatever the scheduling.

    Parameters
    ----------
        func : Callable
            Function of a single item.
        maxWorkers : int, optional
            Upper bound on threads. Defaults to twice the cpu count; the
            wrapped function also accepts a ``workers`` keyword to override
            it per call (1 runs inline).

    Examples
    --------
    >>> @parallelize
    ... def square(x):
    ...     return x * x
    >>> square([1, 2, 3])
    [1, 4, 9]
    """

    def decorate(f):
        @wraps(f)
        def wrapper(lst, workers=None):
            lst = list(lst)
            numberOfWorkers = workers or maxWorkers or int((os.cpu_count() or 1) * 2)
            numberOfWorkers = min(numberOfWorkers, len(lst))

            if numberOfWorkers == 0:
                return []
            if numberOfWorkers == 1:
                return [f(item) for item in lst]
            with concurrent.futures.ThreadPoolExecutor(
                max_workers=numberOfWorkers
            ) as executer:
                return list(executer.map(f, lst))

        return wrapper

    if func is not None:
        return decorate(func)
    return decorate
