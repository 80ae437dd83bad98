#!/usr/bin/env python
import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

with open('requirements.txt') as f:
    requirements = f.read().splitlines()
    requirements = [req.replace('==', '>=') for req in requirements]

setuptools.setup(
    name='qaf-static-detector',
    author='qaf-static developers',
    packages=setuptools.find_packages(
        include=['qaf_static', 'qaf_static.*'], exclude=['tests', '.github']
    ),
    install_requires=requirements,
    entry_points={'console_scripts': ['qaf-static = qaf_static.cli:main']},
    use_scm_version={'write_to': 'qaf_static/_version.py', 'fallback_version': '0.0.0'},
    setup_requires=['setuptools_scm'],
    python_requires='>=3.8',
    description='Residual vector quantization and static quantizer aggregation for '
                'codec-feature spoof detection on synthetic planted-artifact data.',
    long_description=long_description,
    long_description_content_type="text/markdown",
    keywords='residual vector quantization, neural codec, spoof detection, equal error rate',
    license='MIT',
    zip_safe=False
)
