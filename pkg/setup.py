from setuptools import find_packages, setup


setup(
    name='optiplan',
    packages=find_packages(exclude=['tests']),
    version='0.1.0',
    description='Traffic forecasting, multi-layer capacity planning and QoT prediction for IP/optical networks',
    license='MIT',
    python_requires='>=3.8',
    install_requires=['numpy', 'scipy', 'statsmodels', 'scikit-learn', 'networkx', 'pandas'],
    setup_requires=['pytest-runner'],
    tests_require=['pytest'],
    test_suite='tests',
    entry_points={'console_scripts': ['optiplan=optiplan.cli:main']},
)
