#!/usr/bin/env python3
import os
import json
import hashlib
import traceback  # format_exc
from sys import stderr
from datetime import datetime
from typing import Any, Dict, Iterable, Optional, Union


class QAmplifyError(Exception):
    ''' Base class. `exit_code` is what the CLI returns for this error. '''
    exit_code = 1


class SchemaError(QAmplifyError, ValueError):
    ''' Malformed input: bad columns, flags, indices or dimensions. '''
    exit_code = 2


class DataError(QAmplifyError, ValueError):
    ''' Input is well-formed but unusable, e.g., a single class. '''
    exit_code = 3


class NumericError(QAmplifyError, ArithmeticError):
    ''' Non-finite loss, singular system or violated numeric identity. '''
    exit_code = 4


class Log:
    FILE = None  # type: Optional[str]
    LEVEL = 1  # -1: disabled, 0: error, 1: warn, 2: info, 4: debug

    @staticmethod
    def _emit(level: int, tag: str, msg: str) -> None:
        ''' Print to stderr and append to FILE if LEVEL >= level. '''
        if Log.LEVEL < level:
            return
        line = '{} {}{}'.format(datetime.now(), tag, msg)
        print(line, file=stderr)
        if Log.FILE:
            with open(Log.FILE, 'a') as fp:
                fp.write(line + '\n')

    @staticmethod
    def error(e: Union[str, Exception]) -> None:
        ''' Log error message (incl. current timestamp) '''
        Log._emit(0, '[ERROR] ', e if isinstance(e, str) else repr(e))
        if isinstance(e, Exception) and Log.FILE and Log.LEVEL >= 4:
            with open(Log.FILE, 'a') as fp:
                fp.write(traceback.format_exc())

    @staticmethod
    def warn(m: str) -> None:
        Log._emit(1, '[WARN] ', m)

    @staticmethod
    def info(m: str) -> None:
        Log._emit(2, '', m)

    @staticmethod
    def debug(m: str) -> None:
        Log._emit(4, '[DEBUG] ', m)


class FileHash:
    @staticmethod
    def sha256(fname: str) -> str:
        ''' Hex digest of file content. '''
        digest = hashlib.sha256()
        with open(fname, 'rb') as fp:
            while True:
                data = fp.read(65536)
                if not data:
                    break
                digest.update(data)
        return digest.hexdigest()

    @staticmethod
    def inputs(paths: Iterable[Optional[str]]) -> Dict[str, str]:
        ''' Map basename -> sha256 for every given (existing) path. '''
        return {os.path.basename(p): FileHash.sha256(p)
                for p in paths if p and os.path.isfile(p)}


class FileWrite:
    @staticmethod
    def text(fname: str, content: str) -> None:
        '''
        Write UTF-8 text with LF line endings.
        Creates an intermediate ".inprogress" file, no broken outputs.
        '''
        parent = os.path.dirname(os.path.abspath(fname))
        os.makedirs(parent, exist_ok=True)
        tmp_file = fname + '.inprogress'
        with open(tmp_file, 'w', encoding='utf-8', newline='\n') as fp:
            fp.write(content)
        os.replace(tmp_file, fname)

    @staticmethod
    def json(
        fname: str,
        payload: Dict[str, Any],
        *, seed: Optional[int] = None,
        inputs: Iterable[Optional[str]] = ()
    ) -> None:
        '''
        Dump payload as sorted, indented JSON. Every artifact carries
        `tool_version`, `seed` and `input_hashes` for provenance.
        '''
        from . import __version__
        data = dict(payload)
        data['tool_version'] = __version__
        data['seed'] = seed
        data['input_hashes'] = FileHash.inputs(inputs)
        FileWrite.text(fname, json.dumps(data, indent=2, sort_keys=True,
                                         allow_nan=False) + '\n')


def read_json(fname: str) -> Dict[str, Any]:
    ''' Load a JSON object, SchemaError if missing or not an object. '''
    try:
        with open(fname, encoding='utf-8') as fp:
            data = json.load(fp)
    except (OSError, ValueError) as e:
        raise SchemaError('Cannot read JSON "{}": {}'.format(fname, e))
    if not isinstance(data, dict):
        raise SchemaError('Expected JSON object in "{}"'.format(fname))
    return data
