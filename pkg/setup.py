from setuptools import find_packages, setup

from delone_rectifier import __version__


def read_requirements(path: str = "requirements.txt"):
    with open(path, encoding="utf-8") as f:
        lines = [line.strip() for line in f]
    return [line for line in lines if line and not line.startswith("#")]


setup(
    name="delone-rectifier",
    version=__version__,
    description="Substitution tilings, Delone-set discrepancy analysis and explicit rectification maps",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests", "tests.*", "examples", "examples.*")),
    python_requires=">=3.9",
    install_requires=[r for r in read_requirements() if not r.startswith(("pytest", "pytest-cov"))],
    extras_require={"test": ["pytest>=7.3.1", "pytest-cov>=4.1.0"]},
    entry_points={
        "console_scripts": [
            "delone-rectifier=delone_rectifier.main:main",
        ],
    },
)
