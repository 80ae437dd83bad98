"""Run every sample through the data-gen, train, eval and inspect-alpha pipeline."""
from pathlib import Path
import datetime
import json
import os
import sys

from qaf_static.cli import run


samples_folder = Path(__file__).parent.resolve()
output_folder = Path(os.environ.get('QAF_SAMPLES_OUT', samples_folder.joinpath('runs')))

# load the pipeline inputs for each sample run
samples_path = samples_folder.joinpath('sample_runs.json')
with open(samples_path, encoding='utf-8') as samples_json:
    sample_runs = json.load(samples_json)

for sample_run in sample_runs:
    config_path = samples_folder.joinpath(sample_run['config'])
    assert config_path.exists(), f'{config_path} does not exist.'

datetime_now = datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')
print(f'Samples ({datetime_now}) -> {output_folder}')

failed = []
for sample_run in sample_runs:
    name = sample_run['name']
    config = str(samples_folder.joinpath(sample_run['config']))
    run_folder = output_folder.joinpath(name)
    data = run_folder.joinpath('data')
    model = run_folder.joinpath('model.qaf')
    steps = [
        ['data-gen', '--config', config, '--out', str(data)],
        ['train', '--config', config, '--data', str(data), '--out', str(model)]
        + sample_run.get('train', []),
        ['eval', '--model', str(model), '--data', str(data.joinpath('eval.qaf'))],
        ['inspect-alpha', '--model', str(model), '--out', str(run_folder.joinpath('alpha.csv'))],
    ]
    print(f'\t# ------------------ #\n\t# {name}')
    for step in steps:
        code = run(step)
        if code != 0:
            print(f'\t# {step[0]} failed with exit code {code}')
            failed.append(name)
            break

print(f'\t# failed runs: {len(failed)}')
print(f'\t# completed runs: {len(sample_runs) - len(failed)}')

# return exit status
if failed:
    sys.exit(1)
else:
    sys.exit(0)
