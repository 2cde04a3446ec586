"""Error taxonomy shared across the package.

``ConfigError`` covers every validation failure detected before work starts
(CLI exit code 1).  ``NumericError`` covers runtime numeric failures such as
non-finite losses or gradients (CLI exit code 2).
"""


class ConfigError(ValueError):
    pass


class NumericError(RuntimeError):
    pass
