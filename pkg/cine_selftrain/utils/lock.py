import errno
import os
from time import monotonic, sleep
from types import TracebackType
from typing import Optional, Type

from cine_selftrain.errors import DirectoryLocked


class DirectoryLock:
    """A lock file guarding exclusive write access to a directory.

    The lock is the file ``<directory>/.lock``, created atomically with
    ``O_CREAT | O_EXCL``. Readers never take the lock; writers of a study
    container or a run directory hold it for the whole write.

    Like any lock file it is advisory: a process that deletes the file can
    break it.
    """

    FILE_NAME = '.lock'

    def __init__(self, directory: str, timeout: float = 0.0) -> None:
        """Initialise a :class:`DirectoryLock`.

        :param directory: The directory to guard. Created if missing.
        :param timeout: How many seconds :meth:`lock_acquire` waits for a
            held lock before giving up.
        """
        self.directory = directory
        self.path = os.path.join(directory, self.FILE_NAME)
        self.timeout = timeout
        self._held = False

    def is_locked(self) -> bool:
        return os.path.exists(self.path)

    def try_lock_acquire(self) -> bool:
        """Try to acquire the lock.

        :return: ``True`` if the lock is acquired, ``False`` if it is held by
            another writer.
        """
        os.makedirs(self.directory, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except OSError as e:
            if e.errno == errno.EEXIST:
                return False
            raise
        with os.fdopen(fd, 'w') as f:
            f.write(str(os.getpid()))
        self._held = True
        return True

    def lock_acquire(self) -> bool:
        """Acquire the lock, waiting up to :attr:`timeout` seconds.

        :raises DirectoryLocked: If the lock is still held after the timeout.
        :return: Whether the caller had to wait for the lock.
        """
        has_waited_for_lock = False
        deadline = monotonic() + self.timeout
        while not self.try_lock_acquire():
            if monotonic() >= deadline:
                raise DirectoryLocked(self.directory)
            has_waited_for_lock = True
            sleep(0.1)
        return has_waited_for_lock

    def lock_release(self) -> bool:
        """Release the lock.

        :return: Whether this object was holding the lock.
        """
        if not self._held:
            return False
        self._held = False
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return True

    def __enter__(self) -> 'DirectoryLock':
        self.lock_acquire()
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        self.lock_release()
