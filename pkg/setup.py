from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="amp-prototypes",
    version="0.1.0",
    author="AMP Prototypes contributors",
    description="Adaptive manifold prototypes: Stiefel-constrained part prototypes with "
                "learned capacity, additive explanations and a prototype-collapse lab",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "tomli>=1.1; python_version<'3.11'",
        "tomli-w>=1.0",
    ],
    extras_require={
        "dev": [
            "pytest>=6.0",
            "pytest-cov",
            "black",
            "flake8",
            "mypy",
        ],
        "docs": [
            "mkdocs",
            "mkdocs-material",
            "mkdocstrings[python]",
        ],
    },
    entry_points={
        "console_scripts": [
            "amp-prototypes=amp_prototypes.cli:main",
        ],
    },
    keywords=[
        "prototypes",
        "interpretability",
        "stiefel-manifold",
        "riemannian-optimization",
        "proximal-gradient",
        "part-based-models",
        "explainability",
        "numpy",
    ],
    include_package_data=True,
    zip_safe=False,
)
