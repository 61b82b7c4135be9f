import sys
import traceback
import warnings


class GoldRaterWarning(UserWarning):
    """The gold slot was requested through the rater simulation interface."""


class ConvergenceWarning(UserWarning):
    """An iterative estimate stopped at its iteration limit."""


def warning_traceback(message, category, filename, lineno, file=None, line=None):
    """showwarning replacement that prints the call stack first (used with -vv)."""
    stream = file if hasattr(file, "write") else sys.stderr
    stack = "".join(traceback.format_stack()[:-1])
    stream.write(stack + warnings.formatwarning(message, category, filename, lineno, line))
