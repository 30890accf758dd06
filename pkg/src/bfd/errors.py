"""Exception hierarchy shared by every bfd subsystem.

Each exception carries the CLI exit code it maps to, so the command layer
never has to know which module raised it.
"""

EXIT_OK = 0
EXIT_DECLINED = 1
EXIT_USAGE = 2
EXIT_FAILURE = 3


class BfdError(Exception):
    exit_code = EXIT_FAILURE


class UsageError(BfdError):
    exit_code = EXIT_USAGE


class Declined(BfdError):
    """The user answered 'n' at a confirmation prompt."""

    exit_code = EXIT_DECLINED


# archive

class ArchiveError(BfdError):
    pass


class LockTimeout(ArchiveError):
    pass


class InvalidPath(ArchiveError):
    def __init__(self, path):
        super().__init__(f"invalid archive path: {path!r}")
        self.path = path


class EmptyMessage(ArchiveError):
    def __init__(self):
        super().__init__("commit message must not be empty")


class UnknownProject(ArchiveError):
    def __init__(self, project):
        super().__init__(f'unknown project "{project}"')
        self.project = project


class UnknownRef(ArchiveError):
    def __init__(self, project, ref):
        super().__init__(f'unknown revision {ref!r} for project "{project}"')
        self.project = project
        self.ref = ref


class UnknownSeq(UnknownRef):
    pass


class CorruptBlob(ArchiveError):
    def __init__(self, digest):
        super().__init__(f"blob {digest} is missing or corrupt")
        self.digest = digest


class DuplicateTag(ArchiveError):
    def __init__(self, project, name):
        super().__init__(f'tag {name} already exists for "{project}"')
        self.project = project
        self.name = name


class MalformedTag(ArchiveError):
    def __init__(self, name):
        super().__init__(f"malformed tag {name!r} (expected Vdd-dd-dd)")
        self.name = name


class TagOverflow(ArchiveError):
    pass


# manifest

class ManifestError(BfdError):
    pass


class ManifestSyntaxError(ManifestError):
    def __init__(self, line, col, expected):
        super().__init__(f"line {line}, column {col}: expected {expected}")
        self.line = line
        self.col = col
        self.expected = expected


class SchemaError(ManifestError):
    def __init__(self, element, detail=""):
        msg = f"schema violation at <{element}>"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.element = element


class DuplicateDependency(ManifestError):
    def __init__(self, name):
        super().__init__(f'dependency "{name}" listed more than once')
        self.name = name


class SelfDependency(ManifestError):
    def __init__(self, name):
        super().__init__(f'project "{name}" depends on itself')
        self.name = name


class CycleDetected(ManifestError):
    def __init__(self, cycle):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = list(cycle)


class MissingDependency(ManifestError):
    def __init__(self, name, dependent=None):
        msg = f'dependency "{name}" is not in the workspace'
        if dependent:
            msg += f' (required by "{dependent}")'
        super().__init__(msg)
        self.name = name
        self.dependent = dependent


# workspace

class WorkspaceError(BfdError):
    pass


class NotEmpty(WorkspaceError):
    def __init__(self, path):
        super().__init__(f"{path} is not empty")
        self.path = path


class MissingTools(WorkspaceError):
    def __init__(self, path):
        super().__init__(f"tools directory {path} does not exist")
        self.path = path


class NotAWorkspace(WorkspaceError):
    def __init__(self, path):
        super().__init__(f"{path} is not inside a bfd workspace (run 'bfd init' first)")
        self.path = path


class AlreadyCheckedOut(WorkspaceError):
    def __init__(self, project):
        super().__init__(f'"{project}" is already checked out')
        self.project = project


class NotCheckedOut(WorkspaceError):
    def __init__(self, project):
        super().__init__(f'"{project}" is not checked out in this workspace')
        self.project = project


class NothingToArchive(WorkspaceError):
    def __init__(self, project):
        super().__init__(f'nothing to archive in "{project}"')
        self.project = project


class NothingToDeliver(WorkspaceError):
    pass


class DirtyWorkspace(WorkspaceError):
    def __init__(self, status):
        super().__init__(f'"{status.project}" has unarchived changes:\n' + status.describe())
        self.status = status


class UncleanProject(WorkspaceError):
    def __init__(self, status):
        super().__init__(f'refusing to dispose of "{status.project}":\n' + status.describe())
        self.status = status


# scaffold

class ScaffoldError(BfdError):
    pass


class AlreadyScaffolded(ScaffoldError):
    pass


class NotScaffolded(ScaffoldError):
    pass


class InvalidPackage(ScaffoldError):
    pass


class InvalidName(ScaffoldError):
    pass


class ClassExists(ScaffoldError):
    pass


class InterfaceExists(ScaffoldError):
    pass


class PackageExists(ScaffoldError):
    pass


class TemplateError(ScaffoldError):
    pass


# build / test

class BuildError(BfdError):
    pass


class UnknownTarget(BuildError):
    def __init__(self, target):
        super().__init__(f"unknown target {target!r}")
        self.target = target


class UnknownToolchain(BuildError):
    pass


class CompileFailed(BuildError):
    def __init__(self, diagnostics):
        lines = [str(d) for d in diagnostics] or ["compiler reported failure"]
        super().__init__("compilation failed:\n" + "\n".join(lines))
        self.diagnostics = list(diagnostics)


class TestsFailed(BuildError):
    __test__ = False  # keep pytest from collecting this class

    def __init__(self, report):
        t = report.totals
        super().__init__(
            f'tests failed for "{report.project}": '
            f"{t.run} run, {t.failed} failed, {t.errored} errors"
        )
        self.report = report


class MissingBundles(BuildError):
    pass


class MalformedReport(BuildError):
    def __init__(self, path, detail=""):
        super().__init__(f"malformed test report {path}" + (f": {detail}" if detail else ""))
        self.path = path


# ci

class CiError(BfdError):
    pass


class CiConfigError(CiError):
    exit_code = EXIT_USAGE


class StoreUnavailable(CiError):
    pass
