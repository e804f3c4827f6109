from setuptools import find_packages, setup

setup(
    name='avdkf',
    version='0.1.0',
    packages=find_packages(exclude=['tests', 'tests.*', 'examples', 'examples.*']),
    python_requires='>=3.10',
    install_requires=[
        'click',
        'rich',
        'python-dotenv',
        'tomlkit',
        'tabulate',
        'tqdm',
        'platformdirs',
        'multiprocessing-logging',
        'numpy>=1.23.5,<2',
        'scipy',
        'soundfile',
        'torch',
    ],
    extras_require={
        'dev': ['pytest'],
    },
    entry_points={
        'console_scripts': [
            'avdkf=avdkf.cli:main',
        ],
    },
)
