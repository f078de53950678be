#!/usr/bin/env python3
# -*- coding: utf-8 -*-

# Always prefer setuptools over distutils
from setuptools import setup, find_packages

# To use a consistent encoding
from codecs import open
from os import path

__version__ = "0.1.0"
description = "Multi-fidelity hierarchical neural process surrogates, with an age-stratified SIR data generator."

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

# Load requirements
with open(path.join(here, "requirements.txt"), encoding="utf-8") as f:
    requirements = [line.strip() for line in f.readlines() if line.strip()]

setup(
    name="mfhnp",
    version=__version__,
    description=description,
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="GNU General Public License v3.0",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering",
    ],
    python_requires=">=3.8",
    keywords="multi-fidelity,surrogate model,neural process,epidemiology,SIR",
    packages=find_packages(exclude=["tests"]),
    package_data={
        "mfhnp": ["etc/*"],
    },
    include_package_data=True,
    install_requires=requirements,
    extras_require={"test": ["pytest"]},
    scripts=["mf-hnp"],
)
