from setuptools import setup
from qamplify import __doc__, __version__

with open('README.md') as fp:
    longdesc = fp.read()

setup(
    name='qamplify',
    version=__version__,
    description=__doc__.strip(),
    long_description=longdesc,
    long_description_content_type="text/markdown",
    license='MIT',
    packages=['qamplify'],
    entry_points={
        'console_scripts': [
            'qamplify = qamplify.cli:_cli',
        ]
    },
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.6',
        'pandas>=1.5',
        'scikit-learn>=1.0',
        'imbalanced-learn>=0.9',
        'statsmodels>=0.13',
    ],
    extras_require={
        'test': ['pytest>=7'],
    },
    keywords=[
        'quantum-machine-learning',
        'statevector',
        'backorder',
        'imbalanced-data',
        'explainability',
    ],
    classifiers=[
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3 :: Only',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Physics',
    ],
)
