from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="orthovae",
    version="0.1.0",
    author="Your Name",
    description="Autoencoder variants and measurements of local decoder orthogonality",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/yourusername/orthovae",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.11.0",
        "pydantic>=2.0.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "black>=23.0.0",
            "matplotlib>=3.8.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "orthovae=orthovae.cli:main",
        ],
    },
)
