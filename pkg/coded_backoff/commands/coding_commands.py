"""
Handler for verify-coding.
"""
from coded_backoff.commands.rendering import render
from coded_backoff.recorder import Recorder, encode_record
from coded_backoff.services.simcore import verify_coding


def handle_verify_coding(command, stdout) -> int:
    options = command.options
    stats = verify_coding(options["kappa"], options["trials"], options["seed"], options["payload_len"])
    record = stats.model_dump(mode="json") | {"kind": "coding", "kappa": options["kappa"], "seed": options["seed"]}
    with Recorder(command.out) as recorder:
        recorder.write(record)

    if command.format == "jsonl":
        stdout.write(encode_record(record) + "\n")
    elif command.format == "csv":
        stdout.write("kappa,seed,trials,singular,roundtrip_failures,empirical_rate,predicted_rate\n")
        stdout.write(f"{options['kappa']},{options['seed']},{stats.trials},{stats.singular},"
                     f"{stats.roundtrip_failures},{stats.empirical_rate!r},{stats.predicted_rate!r}\n")
    else:
        stdout.write(f"verify-coding: kappa={options['kappa']} seed={options['seed']}\n")
        stdout.write(render("coding.txt.j2", coding=stats))
    return 0
