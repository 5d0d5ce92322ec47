"""
This is the module responsible for generating an HTML index of the artifacts
written by an **fml** run: a Markdown summary of the run on top, then the
artifact files as a tree of links.
"""

from os import path

from markdown import markdown

from fml_resources import fml_template


__all__ = ('generate_index', 'summary_markdown')


def build_tree(file_paths: list[str], outdir: str) -> dict:
    tree: dict = {}
    for file_path in file_paths:
        entry: dict = {'path': file_path, 'relpath': path.relpath(file_path, outdir)}
        path_steps: list = entry['relpath'].split(path.sep)
        add_file(entry, path_steps, tree)

    return tree


# noinspection PyIncorrectDocstring
def add_file(entry: dict, path_steps: list, tree: dict):
    """
    :param entry: A dictionary containing a path to an artifact, and a
    relative path to the same file.
    :param path_steps: A list of steps in a file path to look within.
    """
    node, subpath = path_steps[0], path_steps[1:]
    if node not in tree:
        tree[node] = {}

    if subpath:
        add_file(entry, subpath, tree[node])
    else:
        tree[node]['entry'] = entry


def generate_tree_html(tree: dict) -> str:
    """
    Given a tree of artifact paths, return nested HTML lists linking them.
    """
    items = []
    for node, subtree in sorted(tree.items()):
        if 'entry' in subtree:
            html = '<li><a href="{}">{}</a></li>'.format(subtree['entry']['relpath'], node)
        else:
            html = '<dl><dt>{}</dt><dd><ul>{}</ul></dd></dl>'.format(node, generate_tree_html(subtree))
        items.append(html)

    return '<ul>{}</ul>'.format(''.join(items))


def summary_markdown(command: str, config: dict, highlights: dict) -> str:
    """
    The run summary: the command, the headline numbers, then the
    configuration as a fenced block.
    """
    lines = ["Command: `{}`".format(command), ""]
    for key, value in highlights.items():
        lines.append("* **{}**: `{}`".format(key, value))
    lines += ["", "```", *("{} = {!r}".format(k, v) for k, v in sorted(config.items()) if v is not None), "```"]
    return "\n".join(lines)


def generate_index(files: list, outdir: str, summary: str = '', version: str = '') -> bytes:
    """
    Given the artifacts of a run, generate the HTML of its index page.
    """
    tree: dict = build_tree(files, outdir)

    rendered: str = fml_template({
        "title": 'fml run',
        "stylesheet": 'fml.css',
        "summary_html": markdown(summary, extensions=['markdown.extensions.fenced_code']),
        "tree_html": generate_tree_html(tree),
        "version": version,
    })

    return rendered.encode("utf-8")
