"""CSV export helpers driven by header-to-attribute mappings."""

import csv
from pathlib import Path
from typing import Any, Callable, Dict, Final, List, Sequence


def write_to_csv(
    records: Sequence[Any],
    output_file: str | Path,
    header_mapping: Dict[str, Callable[[Any], Any]],
    encoding: str = 'utf-8'
) -> None:
    """
    Write records to a CSV file using a header mapping.

    Args:
        records: Records to write, one row each
        output_file: Output path; parent directories are created
        header_mapping: Column header -> accessor returning the cell value
        encoding: Character encoding
    """

    # Prepare all rows before opening file
    headers: Final[List[str]] = list(header_mapping.keys())
    rows = [headers]
    rows.extend([
        [header_mapping[header](record) for header in headers]
        for record in records
    ])

    output_path = Path(output_file)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    # Write all rows at once
    with open(output_path, 'w', newline='', encoding=encoding) as csvfile:
        writer = csv.writer(csvfile, lineterminator='\n')
        writer.writerows(rows)
