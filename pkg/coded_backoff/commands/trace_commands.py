"""
Handlers for validate (arrival traces) and replay (slot traces).
"""
import csv

from coded_backoff.recorder import Recorder, encode_record
from coded_backoff.services.adversary import load_trace, validate_schedule
from coded_backoff.services.channel import load_slot_trace, replay


def handle_validate(command, stdout) -> int:
    """Print ok or the first over-cap window. A violation is a result, not an error."""
    options = command.options
    schedule = load_trace(options["trace"])
    result = validate_schedule(schedule, options["w"], options["kappa"], options["rate"])
    record = {
        "kind": "validation",
        "ok": result.ok,
        "cap": result.cap,
        "slot": result.slot,
        "window_sum": result.window_sum,
        "w": options["w"],
        "arrivals": schedule.total,
    }
    if command.format == "jsonl":
        stdout.write(encode_record(record) + "\n")
    elif command.format == "csv":
        writer = csv.writer(stdout, lineterminator="\n")
        writer.writerow(["ok", "cap", "slot", "window_sum"])
        writer.writerow([result.ok, result.cap, "" if result.slot is None else result.slot,
                         "" if result.window_sum is None else result.window_sum])
    else:
        stdout.write(result.describe() + "\n")
    return 0


def _describe_event(event) -> str:
    packets = ",".join(str(packet) for packet in sorted(event.decoded_packets))
    return f"DecodingEvent(size={event.size}, window=[{event.window_start},{event.window_end}], packets={{{packets}}})"


def handle_replay(command, stdout) -> int:
    options = command.options
    slots = load_slot_trace(options["trace"], options["kappa"])
    events = replay(slots, options["kappa"], options["lookback"])
    with Recorder(command.out) as recorder:
        for event in events:
            recorder.write(event.to_record())

    if command.format == "jsonl":
        for event in events:
            stdout.write(encode_record(event.to_record()) + "\n")
    elif command.format == "csv":
        writer = csv.writer(stdout, lineterminator="\n")
        writer.writerow(["size", "window_start", "window_end", "packets"])
        for event in events:
            writer.writerow([event.size, event.window_start, event.window_end,
                             ";".join(str(packet) for packet in sorted(event.decoded_packets))])
    else:
        for event in events:
            stdout.write(_describe_event(event) + "\n")
        stdout.write(f"{len(events)} decoding events over {len(slots)} slots\n")
    return 0
