import json
import struct
import numpy as np
import pandas as pd
from pathlib import Path
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass
from typing import Dict, Iterator, Tuple


DAY_MAGIC        = b'SPATDAY\x00'
DAY_VERSION      = 1
DAY_HEADER       = struct.Struct('<8sIIIQq32s')
CHECKPOINT_MAGIC = b'SPATCKPT'


@dataclass
class EncodedDay:
    """
    One prepared day on the 1 s grid: encoded features plus the six remaining-time targets and their masks.
    `remaining` holds seconds (-1 where masked), `mask` holds 1 for a valid target and 0 otherwise.
    """
    start           : int
    features        : np.ndarray
    remaining       : np.ndarray
    mask            : np.ndarray
    manifest_digest : bytes = b'\x00' * 32

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    @property
    def normalized(self) -> np.ndarray:
        remaining = np.asarray(self.remaining, dtype = np.float64)
        return np.where(self.mask > 0, remaining / Config.HORIZON_SECONDS, Config.MISSING)


class DataHandler:
    def __init__(self):
        """
        The DataHandler class reads and writes every artifact of the pipeline: record streams (one JSON object per
        line), schema manifests, encoded day containers, checkpoints and the delimited report tables.
        """
        self.log = LoggerSetup(logger_file = 'data_handler',
                               logger_name = 'data_handler').get_logger()

    def load_data(self, input_data : str = None) -> pd.DataFrame:
        """
        Loads a delimited text table.
        Arguments:
        ----------
        - input_data (str) : path of the csv file.
        Returns:
        --------
        - data (pd.DataFrame) : the loaded table.
        """
        try:
            return pd.read_csv(filepath_or_buffer = input_data)
        except (OSError, pd.errors.ParserError) as e:
            self.log.error(f'Unable to load table {input_data}: {e}')
            raise

    def save_data(self, result : pd.DataFrame = None, output_file : str = None, index : bool = False):
        """
        Saves a table as csv.
        Arguments:
        ----------
        - result      (pd.DataFrame) : table to save.
        - output_file (str)          : destination path.
        """
        try:
            Path(output_file).parent.mkdir(parents = True, exist_ok = True)
            result.to_csv(output_file, encoding = 'utf-8', index = index, lineterminator = '\n')
            self.log.info(f'Saved table to {output_file}')
        except OSError as e:
            self.log.error(f'Unable to save table {output_file}: {e}')
            raise

    def save_json(self, payload : dict, output_file : str):
        try:
            Path(output_file).parent.mkdir(parents = True, exist_ok = True)
            with open(output_file, 'w', encoding = 'utf-8', newline = '\n') as handle:
                handle.write(json.dumps(payload, sort_keys = True, indent = 2))
                handle.write('\n')
        except OSError as e:
            self.log.error(f'Unable to save {output_file}: {e}')
            raise

    def load_json(self, input_file : str) -> dict:
        try:
            with open(input_file, 'r', encoding = 'utf-8') as handle:
                return json.load(handle)
        except (OSError, json.JSONDecodeError) as e:
            self.log.error(f'Unable to load {input_file}: {e}')
            raise

    def write_records(self, records : list, output_file : str) -> int:
        """
        Writes a record stream, one compact JSON object per line.
        Arguments:
        ----------
        - records     (list) : PerSecondRecord objects or plain dictionaries.
        - output_file (str)  : destination path.
        Returns:
        --------
        - count (int) : number of lines written.
        """
        try:
            Path(output_file).parent.mkdir(parents = True, exist_ok = True)
            with open(output_file, 'w', encoding = 'utf-8', newline = '\n') as handle:
                for record in records:
                    line = record.to_json() if hasattr(record, 'to_json') else json.dumps(record, separators = (',', ':'))
                    handle.write(line)
                    handle.write('\n')
            self.log.info(f'Wrote {len(records)} records to {output_file}')
            return len(records)
        except OSError as e:
            self.log.error(f'Unable to write records to {output_file}: {e}')
            raise

    def read_record_lines(self, input_file : str) -> Iterator[str]:
        """
        Yields the raw lines of a record stream; blank lines are skipped, parsing is left to the ingest step.
        """
        try:
            with open(input_file, 'r', encoding = 'utf-8') as handle:
                for line in handle:
                    if line.strip():
                        yield line.rstrip('\n')
        except OSError as e:
            self.log.error(f'Unable to read records from {input_file}: {e}')
            raise

    def save_text(self, text : str, output_file : str):
        try:
            Path(output_file).parent.mkdir(parents = True, exist_ok = True)
            with open(output_file, 'w', encoding = 'utf-8', newline = '\n') as handle:
                handle.write(text)
        except OSError as e:
            self.log.error(f'Unable to save {output_file}: {e}')
            raise

    def load_text(self, input_file : str) -> str:
        try:
            with open(input_file, 'r', encoding = 'utf-8') as handle:
                return handle.read()
        except OSError as e:
            self.log.error(f'Unable to load {input_file}: {e}')
            raise

    def save_day(self, day : EncodedDay, output_file : str):
        """
        Writes an encoded day container: a fixed header followed by little-endian float32 rows of
        features | remaining seconds | masks.
        Arguments:
        ----------
        - day         (EncodedDay) : the prepared day.
        - output_file (str)        : destination path.
        """
        n_phases = day.remaining.shape[1]
        matrix   = np.hstack([day.features, day.remaining, day.mask]).astype('<f4', copy = False)
        header   = DAY_HEADER.pack(DAY_MAGIC, DAY_VERSION, day.feature_count, n_phases, day.rows, int(day.start),
                                   bytes(day.manifest_digest))
        try:
            Path(output_file).parent.mkdir(parents = True, exist_ok = True)
            with open(output_file, 'wb') as handle:
                handle.write(header)
                handle.write(np.ascontiguousarray(matrix).tobytes())
            self.log.info(f'Saved encoded day ({day.rows} x {day.feature_count}) to {output_file}')
        except OSError as e:
            self.log.error(f'Unable to save encoded day {output_file}: {e}')
            raise

    def load_day(self, input_file : str) -> EncodedDay:
        """
        Opens an encoded day container; the matrix is memory-mapped, not read.
        Arguments:
        ----------
        - input_file (str) : container path.
        Returns:
        --------
        - EncodedDay : views onto the mapped matrix.
        """
        try:
            with open(input_file, 'rb') as handle:
                raw = handle.read(DAY_HEADER.size)
        except OSError as e:
            self.log.error(f'Unable to open encoded day {input_file}: {e}')
            raise
        if len(raw) != DAY_HEADER.size:
            raise ValueError(f'{input_file} is not an encoded day container')
        magic, version, width, n_phases, rows, start, digest = DAY_HEADER.unpack(raw)
        if magic != DAY_MAGIC or version != DAY_VERSION:
            raise ValueError(f'{input_file} is not an encoded day container (version {version})')

        columns = width + 2 * n_phases
        matrix  = np.memmap(input_file, dtype = '<f4', mode = 'r', offset = DAY_HEADER.size, shape = (rows, columns))
        return EncodedDay(start           = start,
                          features        = matrix[:, :width],
                          remaining       = matrix[:, width:width + n_phases],
                          mask            = matrix[:, width + n_phases:],
                          manifest_digest = digest)

    def save_checkpoint(self, header : dict, arrays : Dict[str, np.ndarray], output_file : str):
        """
        Writes a checkpoint: magic, header length, JSON header with sorted keys, then every array as little-endian
        float64 in the order the header lists them. Saving the same content twice yields identical bytes.
        """
        header  = dict(header)
        names   = list(arrays)
        header['arrays'] = [[name, list(np.shape(arrays[name]))] for name in names]
        encoded = json.dumps(header, sort_keys = True, separators = (',', ':')).encode('utf-8')
        try:
            Path(output_file).parent.mkdir(parents = True, exist_ok = True)
            with open(output_file, 'wb') as handle:
                handle.write(CHECKPOINT_MAGIC)
                handle.write(struct.pack('<I', len(encoded)))
                handle.write(encoded)
                for name in names:
                    handle.write(np.ascontiguousarray(arrays[name], dtype = '<f8').tobytes())
        except OSError as e:
            self.log.error(f'Unable to save checkpoint {output_file}: {e}')
            raise

    def load_checkpoint(self, input_file : str) -> Tuple[dict, Dict[str, np.ndarray]]:
        try:
            with open(input_file, 'rb') as handle:
                payload = handle.read()
        except OSError as e:
            self.log.error(f'Unable to load checkpoint {input_file}: {e}')
            raise
        if payload[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise ValueError(f'{input_file} is not a checkpoint')
        cursor   = len(CHECKPOINT_MAGIC)
        (length,) = struct.unpack_from('<I', payload, cursor)
        cursor  += 4
        header   = json.loads(payload[cursor:cursor + length].decode('utf-8'))
        cursor  += length
        arrays   = {}
        for name, shape in header['arrays']:
            size         = int(np.prod(shape, dtype = np.int64))
            arrays[name] = np.frombuffer(payload, dtype = '<f8', count = size, offset = cursor).reshape(shape).copy()
            cursor      += 8 * size
        return header, arrays
