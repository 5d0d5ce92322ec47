from setuptools import setup, find_packages

description = (
    "A finite-depth laboratory for regular sets: nested cube systems with "
    "their center cubes removed, radially weighted doubling measures on them, "
    "and fat/thin experiments."
)

setup(
    name="FML",
    version="0.1.0",
    description=description,
    packages=find_packages(exclude=['tests']),
    entry_points={
        'console_scripts': [
            'fml = fml.main:main',
        ]
    },
    install_requires=['numpy', 'markdown', 'pystache', 'tomli'],
)
