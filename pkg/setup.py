from setuptools import find_packages, setup

setup(
    name="loptlib",
    version="0.1.0",
    package_dir={'': 'src'},
    packages=find_packages(where='src'),
    install_requires=[
        "numpy",
        "scipy",
        "toolz",
        "pandas",
        "chex",
        "pyyaml",
        "tqdm",
    ],
    extras_require={
        "test": ["pytest"],
    },
    entry_points={
        "console_scripts": ["lopt = loptlib.cli:main"],
    },
)
