"""Functions that are helpful to the other mfhnp modules."""

import io
import os
import zlib
import logging
import tempfile

import numpy as np
import pandas as pd

from contextlib import contextmanager
from datetime import datetime
from typing import Iterator, List, Union

from tabulate import tabulate

from .exceptions import DatasetFormatError

STDOUT_FORMATS = ["json", "csv", "ascii_table", "print"]

SeedKey = Union[int, str]


def stdout_like(df: pd.DataFrame, format="print"):
    """Print a table to stdout in one of STDOUT_FORMATS."""
    if format not in STDOUT_FORMATS:
        logging.warning(f"{format} is not a supported output format for the cli")
        return False

    table_name = ""
    try:
        table_name = f"{df.name}:"
    except AttributeError:
        # table has no name
        pass

    if format == "json":
        print(df.to_json(orient="records"))
        return

    if format == "csv":
        print(df.to_csv(index=False))
        return

    if format == "ascii_table":
        print()
        print(table_name)
        print(tabulate(df, headers="keys", tablefmt="simple", showindex=False))
        print()
        return

    print()
    print(table_name)
    print(df)
    print()
    return


def sanitize_table_name(table_name=None) -> str:
    """Sanitize a table name.

    Try to make a table name safe to be a file or worksheet name.

    Args:
        table_name: The table name to sanitize.

    Returns:
       A santized name string.
    """
    if table_name is None:
        return f"No name - {datetime.now().timestamp()}"

    safe_name = table_name.strip()

    _invalid_chars = ["\\", "*", "?", ":", "/", "[", "]"]
    for invalid_char in _invalid_chars:
        safe_name = safe_name.replace(invalid_char, "-")

    return safe_name


def dataframes_to_xlsx_bytes(tables: List[pd.DataFrame]) -> bytes:
    """Export dataframes to xlsx bytes, one worksheet per table.

    Args:
        tables: A list of pd.DataFrames, ideally carrying a `name`.

    Returns:
        The bytestring representation of the xlsx file.
    """
    tab_names = []
    tab_name_map = {}
    table_tab_map = {}
    for table in tables:
        table_name = getattr(table, "name", None)
        if not table_name:
            logging.warning("result table has no name.")
        clean_table_name = sanitize_table_name(table_name)

        # openpyxl guidance to keep names to 31 chars or less
        if len(clean_table_name) > 31:
            clean_table_name = clean_table_name[:31]

        if clean_table_name in tab_names:
            logging.warning(f"name collision for {clean_table_name}")
            clean_table_name = f"{clean_table_name[:27]}-{len(tab_names):03d}"

        tab_names.append(clean_table_name)
        logging.debug(f"changed table name from '{table_name}' to '{clean_table_name}'")
        tab_name_map[clean_table_name] = table_name
        table_tab_map[clean_table_name] = table

    xlsx_bytes = io.BytesIO()
    writer = pd.ExcelWriter(xlsx_bytes, engine="openpyxl")
    tab_name_map_df = pd.DataFrame.from_dict(tab_name_map, orient="index", columns=["Table Name"])
    tab_name_map_df.index.names = ["Tab Name"]
    tab_name_map_df.to_excel(writer, sheet_name="Tab Name Map")

    for name, table in table_tab_map.items():
        table.to_excel(writer, sheet_name=name, index=False)

    writer.close()
    xlsx_bytes.seek(0)
    filebytes = xlsx_bytes.read()
    xlsx_bytes.close()

    return filebytes


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write `data` to a temporary file next to `path`, then rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_table_csv(path: str, df: pd.DataFrame) -> None:
    """Write a result table as CSV, atomically."""
    atomic_write_text(path, df.to_csv(index=False))
    logging.info(f"wrote {len(df)} rows to {path}")


@contextmanager
def directory_lock(directory: str) -> Iterator[str]:
    """Hold an exclusive writer lock on a dataset directory.

    A second writer fails with DatasetFormatError instead of interleaving
    its files with ours.
    """
    os.makedirs(directory, exist_ok=True)
    lock_path = os.path.join(directory, ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DatasetFormatError(f"{directory} is locked by another writer ({lock_path})")
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield lock_path
    finally:
        os.remove(lock_path)


def _seed_word(key: SeedKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_rng(seed: int, *keys: SeedKey) -> np.random.Generator:
    """A generator for an independent, reproducible stream identified by `keys`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [_seed_word(k) for k in keys]))
