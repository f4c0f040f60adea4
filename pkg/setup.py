from setuptools import setup
import os.path
import re

def get_version():
    with open(os.path.join(os.path.dirname(__file__), "pyproject.toml"), "r") as f:
        for l in f:
            if m := re.search(r'^version *= *"([^"]+)" *$', l):
                return m.group(1)


setup(
    name="anchor_runtime",
    version=get_version(),
    packages=[
        "anchor_runtime",
        "anchor_runtime.bench",
        "anchor_runtime.bus",
        "anchor_runtime.client",
        "anchor_runtime.core",
        "anchor_runtime.demo",
        "anchor_runtime.gateway",
        "anchor_runtime.loggers",
        "anchor_runtime.records",
        "anchor_runtime.utils",
        "anchor_runtime.wire",
    ],
    package_dir={"": "src"},
    install_requires=[
        "click>=8.0.3",
        "numpy>=1.24",
        "opentelemetry-api>=1.13.0",
        "pydantic>=2.6.4",
    ],
    extras_require={"structlog": ["structlog>=21.5.0"]},
    entry_points={"console_scripts": ["anchorctl = anchor_runtime.cli:main"]},
)
