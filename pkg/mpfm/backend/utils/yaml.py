import yaml as _yaml

try:
    from yaml import CSafeLoader as SafeLoader, CSafeDumper as SafeDumper
except ImportError:
    from yaml import SafeLoader, SafeDumper  # type: ignore[assignment]

YAMLError = _yaml.YAMLError


def register_config_type(clazz):
    """Let config dataclasses be dumped directly, as plain mappings."""
    SafeDumper.add_representer(clazz, clazz.yaml_serialize_handler)


def dump(data, stream=None, **kwargs):
    """Dump with the safe (C when available) dumper. Returns a str if stream is None."""
    return _yaml.dump(data, stream, Dumper=SafeDumper, **kwargs)


# noinspection PyPep8Naming
def load(stream, Loader=SafeLoader):
    """Load a YAML stream with the safe loader."""
    return _yaml.load(stream, Loader=Loader)
