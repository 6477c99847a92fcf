import os

import yaml

from .errors import ConfigError

SPEC_KEYS = (
    "name",
    "detectors",
    "n_users",
    "n_antennas",
    "noise_var",
    "prior_var",
    "prior_var_sweep",
    "source_var",
    "seed",
    "prior_mode",
    "n_trials",
    "max_iters",
    "tol",
    "relaxation_mode",
    "schedule",
    "output_path",
    "workers",
)


def read_spec(source):
    """
    Reads an experiment spec from a YAML file or a dictionary.
    For ease of running experiments from the command line or from scripts.

    Returns the spec as a flat dictionary.

    Parameters
    ----------
    source: str, os.PathLike or dict
        Path to a YAML spec file, or an already parsed spec.

    Returns
    -------
    dict
        Spec entries, keyed by field name.
    """
    if isinstance(source, dict):
        data = dict(source)
    elif isinstance(source, (str, os.PathLike)) and os.path.isfile(source):
        with open(source, "r") as f:
            data = yaml.safe_load(f) or {}
    else:
        raise TypeError("source must be a spec file path or a dictionary.")

    if not isinstance(data, dict):
        raise ConfigError("spec file must contain flat key: value pairs.")

    unknown = sorted(str(key) for key in data if key not in SPEC_KEYS)
    if unknown:
        raise ConfigError(f"unknown spec keys: {', '.join(unknown)}.")

    return data


def apply_overrides(data, **overrides):
    """
    Returns a copy of ``data`` with every override that is not None applied.
    Used by the CLI, whose flags take precedence over the spec file.
    """
    merged = dict(data)
    for key, value in overrides.items():
        if key not in SPEC_KEYS:
            raise ConfigError(f"unknown spec key: {key}.")
        if value is not None:
            merged[key] = value
    return merged


def parse_list(text, kind=str):
    """
    Splits a comma separated list, e.g. 'lmmse,sa_gmpid' or '1,0.1,0.01'.

    Parameters
    ----------
    text: str or list
        Comma separated values. Lists are passed through element by element.
    kind: type, default=str
        Conversion applied to each entry.

    Returns
    -------
    list
        Converted entries, empty entries dropped.
    """
    if text is None:
        return None
    if isinstance(text, str):
        items = [item.strip() for item in text.split(",")]
    else:
        items = list(text)
    try:
        return [kind(item) for item in items if item != ""]
    except ValueError as err:
        raise ConfigError(f"could not parse list {text!r}: {err}") from err
