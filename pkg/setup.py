"""vpl-kinetic package setup."""
from importlib import import_module

from setuptools import find_packages, setup

setup(
    name="vpl-kinetic",
    version=import_module("vpl_kinetic").__version__,
    description=(
        "Vlasov-Poisson-Landau near-Maxwellian simulator "
        "with a verification suite."
    ),
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    license="MIT",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"vpl_kinetic": ["scenarios/*.yml"]},
    entry_points={"console_scripts": ["vpl = vpl_kinetic.cli.main:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: Implementation :: CPython",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    keywords="kinetic plasma landau vlasov poisson collision simulation",
    python_requires=">=3.9",
    install_requires=["numpy>=1.22", "scipy>=1.12", "pyyaml"],
    extras_require={
        "code_style": ["flake8>=3.7.0", "black", "pre-commit"],
        "testing": ["coverage", "pytest>=6", "pytest-cov", "pytest-regressions"],
        "rtd": ["sphinx", "myst-parser", "pydata-sphinx-theme"],
    },
    zip_safe=False,
)
