import numpy as np


class ByteStream:
    def __init__(self, data: bytes | bytearray | memoryview):
        self.data = memoryview(data)
        self.current = 0

    def __len__(self):
        return max(0, len(self.data) - self.current)

    def __bool__(self):
        return len(self) > 0

    def read(self, size: int):
        if size < 0 or self.current + size > len(self.data):
            raise EOFError
        view = self.data[self.current: self.current + size]
        self.current += size
        return view

    def __readUnsigned(self, size: int) -> int:
        return int.from_bytes(self.read(size), byteorder='little')

    def readU8(self):
        return self.__readUnsigned(1)

    def readU32(self):
        return self.__readUnsigned(4)

    def readU64(self):
        return self.__readUnsigned(8)

    def readF64(self) -> float:
        return float(np.frombuffer(self.read(8), dtype='<f8')[0])

    def readMagic(self, expected: bytes) -> bool:
        return bytes(self.read(len(expected))) == expected

    def readArray(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        # copy so the result outlives the underlying buffer
        return np.frombuffer(self.read(itemsize * count), dtype=dtype).copy()

    def readF32Array(self, count: int) -> np.ndarray:
        return self.readArray('<f4', count).astype(np.float32)

    def readF64Array(self, count: int) -> np.ndarray:
        return self.readArray('<f8', count).astype(np.float64)

    def readU32Array(self, count: int) -> np.ndarray:
        return self.readArray('<u4', count).astype(np.int64)

    def readU64Array(self, count: int) -> np.ndarray:
        return self.readArray('<u8', count).astype(np.int64)

    def readU8Array(self, count: int) -> np.ndarray:
        return self.readArray('u1', count).astype(np.uint8)
