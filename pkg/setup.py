from setuptools import setup, find_packages

setup(
    name="sceneguard",
    version="0.1.0",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.11",
        "pydantic>=2.5",
        "python-dotenv>=1.0",
        "tqdm>=4.66",
        "jiwer>=3.0",
        "pystoi>=0.4",
        "tomli>=2.0; python_version < '3.11'",
    ],
    entry_points={
        "console_scripts": [
            "sceneguard=sceneguard.cli:main",
        ],
    },
    python_requires=">=3.10",
)
