import os

import setuptools

with open(os.path.join(os.path.dirname(__file__), "VERSION")) as version_file:
    version = version_file.read().strip()

with open(os.path.join(os.path.dirname(__file__), "README.rst")) as f:
    readme = f.read()

setuptools.setup(
    name="nucseg",
    version=version,
    description="Two-stage instance segmentation of nuclei in "
    "histopathology images.",
    long_description=readme,
    long_description_content_type="text/x-rst",
    packages=setuptools.find_packages(exclude=("tests", "docs")),
    package_data={"nucseg": ["templates/*.j2"]},
    include_package_data=True,
    keywords=[
        "histopathology",
        "nucleus segmentation",
        "instance segmentation",
        "deep learning",
        "reproducible research",
    ],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: BSD License",
        "Operating System :: OS Independent",
        "Intended Audience :: Science/Research",
        "Development Status :: 3 - Alpha",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
    ],
    install_requires=[
        "aspecd>=0.7.0",
        "jinja2",
        "matplotlib",
        "numpy",
        "Pillow",
        "scikit-image",
        "scipy",
        "torch",
    ],
    extras_require={
        "dev": ["prospector", "pyroma", "bandit", "black"],
        "docs": ["sphinx", "sphinx_rtd_theme", "sphinx_multiversion"],
        "deployment": ["build", "twine"],
    },
    entry_points={"console_scripts": ["nucseg = nucseg.cli:main"]},
    python_requires=">=3.9",
)
